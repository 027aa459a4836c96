//! Joint per-flow action selection: maximize a blend of worst-flow and
//! mean QoE plus a fairness term, under a hard cap on the PRB excess
//! that prioritization may take from ordinary traffic.
//!
//! Exactly one action is picked per flow. Small instances are solved by
//! exhaustive enumeration; larger ones by depth-first branch and bound
//! with an admissible bound. Both visit action vectors in ascending
//! lexicographic order under the canonical action order (fewer
//! prioritized subflows first), so ties resolve identically.

/// Per-flow solver inputs: one QoE value (0-100 scale) and one PRB
/// reservation per candidate action, in canonical action order.
#[derive(Debug, Clone)]
pub struct FlowSolveInput {
    pub qoe: Vec<f64>,
    pub reserved_prbs: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SolveInput {
    pub flows: Vec<FlowSolveInput>,
    /// Total PRB budget over one decision interval.
    pub total_prb: f64,
    /// PRBs attributable to non-conferencing traffic under the default
    /// scheduler (the fairness normalizer).
    pub non_zoom_prbs: f64,
    /// Spare capacity: total minus non-conferencing share.
    pub slack_prbs: f64,
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutcome {
    /// Chosen action index per flow (canonical order), aligned with input.
    pub actions: Vec<usize>,
    pub objective: f64,
    pub q_agg: f64,
    pub fairness: f64,
    pub excess_prbs: f64,
    /// True when no action vector satisfied the excess cap and the
    /// all-unprioritized fallback was substituted.
    pub fallback: bool,
}

#[derive(Debug, Clone, Copy)]
struct Evaluation {
    objective: f64,
    q_agg: f64,
    fairness: f64,
    excess: f64,
}

fn evaluate(input: &SolveInput, actions: &[usize]) -> Option<Evaluation> {
    let n = input.flows.len() as f64;
    let mut q_sum = 0.0;
    let mut q_min = f64::INFINITY;
    let mut reserved = 0.0;
    for (flow, &a) in input.flows.iter().zip(actions) {
        let q = flow.qoe[a];
        q_sum += q;
        q_min = q_min.min(q);
        reserved += flow.reserved_prbs[a];
    }
    let excess = (reserved - input.slack_prbs).max(0.0);
    if excess > (1.0 - input.beta) * input.non_zoom_prbs {
        return None;
    }
    let q_agg = input.alpha * q_min + (1.0 - input.alpha) * q_sum / n;
    let fairness = 1.0 - excess / input.non_zoom_prbs.max(1.0);
    let objective = (1.0 - input.beta) * q_agg + input.beta * fairness;
    Some(Evaluation { objective, q_agg, fairness, excess })
}

fn outcome(actions: Vec<usize>, eval: Evaluation) -> SolveOutcome {
    SolveOutcome {
        actions,
        objective: eval.objective,
        q_agg: eval.q_agg,
        fairness: eval.fairness,
        excess_prbs: eval.excess,
        fallback: false,
    }
}

/// Exhaustive search over the full action-vector space in lexicographic
/// order; strict improvement keeps the first (lexicographically
/// smallest) optimum.
pub fn solve_enumerate(input: &SolveInput) -> Option<SolveOutcome> {
    let n = input.flows.len();
    if n == 0 {
        return None;
    }
    let mut indices = vec![0usize; n];
    let mut best: Option<(Vec<usize>, Evaluation)> = None;
    loop {
        if let Some(eval) = evaluate(input, &indices) {
            let better = match &best {
                None => true,
                Some((_, b)) => eval.objective > b.objective,
            };
            if better {
                best = Some((indices.clone(), eval));
            }
        }
        // Odometer increment, last flow fastest.
        let mut pos = n;
        loop {
            if pos == 0 {
                return best.map(|(actions, eval)| outcome(actions, eval));
            }
            pos -= 1;
            indices[pos] += 1;
            if indices[pos] < input.flows[pos].qoe.len() {
                break;
            }
            indices[pos] = 0;
        }
    }
}

/// Depth-first branch and bound. Admissible bound per node: remaining
/// flows take their best QoE and their cheapest reservation. Pruning on
/// bound <= incumbent is tie-safe because leaves are visited in
/// lexicographic order, so any later tie is lexicographically greater.
pub fn solve_branch_and_bound(input: &SolveInput) -> Option<SolveOutcome> {
    let n = input.flows.len();
    if n == 0 {
        return None;
    }
    let n_f = n as f64;
    let u_norm = input.non_zoom_prbs.max(1.0);
    let excess_cap = (1.0 - input.beta) * input.non_zoom_prbs;

    // Suffix aggregates over flows k..n.
    let mut suffix_max_q_sum = vec![0.0; n + 1];
    let mut suffix_min_max_q = vec![f64::INFINITY; n + 1];
    let mut suffix_min_r_sum = vec![0.0; n + 1];
    for k in (0..n).rev() {
        let max_q = input.flows[k].qoe.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min_r = input.flows[k].reserved_prbs.iter().cloned().fold(f64::INFINITY, f64::min);
        suffix_max_q_sum[k] = suffix_max_q_sum[k + 1] + max_q;
        suffix_min_max_q[k] = suffix_min_max_q[k + 1].min(max_q);
        suffix_min_r_sum[k] = suffix_min_r_sum[k + 1] + min_r;
    }

    struct Ctx<'a> {
        input: &'a SolveInput,
        n_f: f64,
        u_norm: f64,
        excess_cap: f64,
        suffix_max_q_sum: Vec<f64>,
        suffix_min_max_q: Vec<f64>,
        suffix_min_r_sum: Vec<f64>,
        best: Option<(Vec<usize>, Evaluation)>,
        stack: Vec<usize>,
    }

    impl Ctx<'_> {
        fn bound(&self, depth: usize, q_sum: f64, q_min: f64, reserved: f64) -> Option<f64> {
            let input = self.input;
            let e_lb = (reserved + self.suffix_min_r_sum[depth] - input.slack_prbs).max(0.0);
            if e_lb > self.excess_cap {
                return None;
            }
            let q_mean_ub = (q_sum + self.suffix_max_q_sum[depth]) / self.n_f;
            let z_ub = q_min.min(self.suffix_min_max_q[depth]);
            let f_ub = 1.0 - e_lb / self.u_norm;
            Some(
                (1.0 - input.beta) * (input.alpha * z_ub + (1.0 - input.alpha) * q_mean_ub)
                    + input.beta * f_ub,
            )
        }

        fn dfs(&mut self, depth: usize, q_sum: f64, q_min: f64, reserved: f64) {
            let n = self.input.flows.len();
            if depth == n {
                if let Some(eval) = evaluate(self.input, &self.stack) {
                    let better = match &self.best {
                        None => true,
                        Some((_, b)) => eval.objective > b.objective,
                    };
                    if better {
                        self.best = Some((self.stack.clone(), eval));
                    }
                }
                return;
            }
            match self.bound(depth, q_sum, q_min, reserved) {
                None => return,
                Some(bound) => {
                    if let Some((_, b)) = &self.best {
                        if bound <= b.objective {
                            return;
                        }
                    }
                }
            }
            let flow = &self.input.flows[depth];
            for a in 0..flow.qoe.len() {
                self.stack.push(a);
                self.dfs(
                    depth + 1,
                    q_sum + flow.qoe[a],
                    q_min.min(flow.qoe[a]),
                    reserved + flow.reserved_prbs[a],
                );
                self.stack.pop();
            }
        }
    }

    let mut ctx = Ctx {
        input,
        n_f,
        u_norm,
        excess_cap,
        suffix_max_q_sum,
        suffix_min_max_q,
        suffix_min_r_sum,
        best: None,
        stack: Vec::with_capacity(n),
    };
    ctx.dfs(0, 0.0, f64::INFINITY, 0.0);
    ctx.best.map(|(actions, eval)| outcome(actions, eval))
}

/// Dispatch by instance size; `None` means no feasible vector exists and
/// the caller must fall back to all-unprioritized.
pub fn solve(input: &SolveInput, enumeration_threshold: usize) -> Option<SolveOutcome> {
    if input.flows.len() <= enumeration_threshold {
        solve_enumerate(input)
    } else {
        solve_branch_and_bound(input)
    }
}
