//! Byte-level subflow classification for conferencing traffic, behind a
//! pluggable per-application interface.

use std::collections::BTreeMap;

use crate::packet::{SimPacket, SubflowKind};

pub const ZOOM_PORT: u16 = 8801;

pub const TYPE_AUDIO: u8 = 0x0f;
pub const TYPE_VIDEO: u8 = 0x10;
pub const TYPE_PROBE: u8 = 0x15;

/// Probe packets are only recognized above this L7 payload size.
pub const PROBE_MIN_PAYLOAD: u32 = 1000;

/// The type byte lives at payload offset 8; anything shorter is malformed.
pub const MIN_PAYLOAD_LEN: u32 = 9;

pub const BASE_EXTENSIONS: [[u8; 3]; 4] = [
    [0x50, 0x00, 0x00],
    [0x5f, 0xf0, 0x00],
    [0x5f, 0x0f, 0xff],
    [0x5f, 0x7f, 0xff],
];

pub const HIGH_FPS_EXTENSIONS: [[u8; 3]; 3] = [
    [0x5f, 0xf7, 0x77],
    [0x5f, 0xfa, 0xaa],
    [0x5f, 0xf5, 0x55],
];

pub const LOW_FPS_EXTENSIONS: [[u8; 3]; 1] = [[0x57, 0x77, 0x77]];

/// Wire-level view of a packet as seen by the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ZoomWirePayload {
    pub src_port: u16,
    pub dst_port: u16,
    pub is_ipv4: bool,
    pub zoom_pkt_type: u8,
    pub first_extension_data: [u8; 3],
    pub payload_len: u32,
}

impl ZoomWirePayload {
    /// Reconstruct the wire view from a simulated packet. Packets without
    /// an L7 type byte have no conferencing payload to inspect.
    pub fn from_packet(pkt: &SimPacket) -> Option<Self> {
        pkt.zoom_pkt_type.map(|t| ZoomWirePayload {
            src_port: pkt.transport.src_port,
            dst_port: pkt.transport.dst_port,
            is_ipv4: true,
            zoom_pkt_type: t,
            first_extension_data: pkt.rtp.map(|r| r.extension_data).unwrap_or([0; 3]),
            payload_len: pkt.size_bytes,
        })
    }
}

/// Classify a packet into a conferencing subflow. Total: every input maps
/// to exactly one kind; absent or malformed payloads are `Background`.
pub fn classify_zoom(payload: Option<&ZoomWirePayload>) -> SubflowKind {
    let Some(p) = payload else {
        return SubflowKind::Background;
    };
    if !p.is_ipv4 || p.payload_len < MIN_PAYLOAD_LEN {
        return SubflowKind::Background;
    }
    if p.src_port != ZOOM_PORT && p.dst_port != ZOOM_PORT {
        return SubflowKind::Background;
    }
    match p.zoom_pkt_type {
        TYPE_AUDIO => SubflowKind::Audio,
        TYPE_VIDEO => {
            let ext = p.first_extension_data;
            if BASE_EXTENSIONS.contains(&ext) {
                SubflowKind::Base
            } else if HIGH_FPS_EXTENSIONS.contains(&ext) {
                SubflowKind::HighFpsEnhancement
            } else if LOW_FPS_EXTENSIONS.contains(&ext) {
                SubflowKind::LowFpsEnhancement
            } else {
                SubflowKind::SmallWindowVideo
            }
        }
        TYPE_PROBE if p.payload_len > PROBE_MIN_PAYLOAD => SubflowKind::Probe,
        _ => SubflowKind::Control,
    }
}

/// Per-application classifier. Implementations must be pure and
/// deterministic.
pub trait DpiPlugin: Send + Sync {
    fn name(&self) -> &str;
    fn classify(&self, pkt: &SimPacket) -> SubflowKind;
}

pub struct ZoomDpi;

impl DpiPlugin for ZoomDpi {
    fn name(&self) -> &str {
        "zoom"
    }

    fn classify(&self, pkt: &SimPacket) -> SubflowKind {
        classify_zoom(ZoomWirePayload::from_packet(pkt).as_ref())
    }
}

/// Registry of classifier plugins keyed by application name.
pub struct DpiRegistry {
    plugins: BTreeMap<String, Box<dyn DpiPlugin>>,
}

impl Default for DpiRegistry {
    fn default() -> Self {
        let mut r = DpiRegistry { plugins: BTreeMap::new() };
        r.register(Box::new(ZoomDpi));
        r
    }
}

impl DpiRegistry {
    pub fn register(&mut self, plugin: Box<dyn DpiPlugin>) {
        self.plugins.insert(plugin.name().to_string(), plugin);
    }

    pub fn get(&self, name: &str) -> Option<&dyn DpiPlugin> {
        self.plugins.get(name).map(|p| p.as_ref())
    }

    pub fn names(&self) -> Vec<&str> {
        self.plugins.keys().map(|s| s.as_str()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn payload(port: u16, ty: u8, ext: [u8; 3], len: u32) -> ZoomWirePayload {
        ZoomWirePayload {
            src_port: 40000,
            dst_port: port,
            is_ipv4: true,
            zoom_pkt_type: ty,
            first_extension_data: ext,
            payload_len: len,
        }
    }

    #[test]
    fn audio_type_byte() {
        assert_eq!(classify_zoom(Some(&payload(8801, 0x0f, [0; 3], 200))), SubflowKind::Audio);
    }

    #[test]
    fn base_layer_extension() {
        assert_eq!(
            classify_zoom(Some(&payload(8801, 0x10, [0x50, 0, 0], 600))),
            SubflowKind::Base
        );
        for ext in BASE_EXTENSIONS {
            assert_eq!(classify_zoom(Some(&payload(8801, 0x10, ext, 600))), SubflowKind::Base);
        }
    }

    #[test]
    fn enhancement_extensions() {
        for ext in HIGH_FPS_EXTENSIONS {
            assert_eq!(
                classify_zoom(Some(&payload(8801, 0x10, ext, 1100))),
                SubflowKind::HighFpsEnhancement
            );
        }
        for ext in LOW_FPS_EXTENSIONS {
            assert_eq!(
                classify_zoom(Some(&payload(8801, 0x10, ext, 1100))),
                SubflowKind::LowFpsEnhancement
            );
        }
        assert_eq!(
            classify_zoom(Some(&payload(8801, 0x10, [0xaa, 0xbb, 0xcc], 400))),
            SubflowKind::SmallWindowVideo
        );
    }

    #[test]
    fn non_zoom_port_is_background() {
        assert_eq!(classify_zoom(Some(&payload(443, 0x10, [0x50, 0, 0], 600))), SubflowKind::Background);
        assert_eq!(classify_zoom(None), SubflowKind::Background);
    }

    #[test]
    fn probe_requires_large_payload() {
        assert_eq!(classify_zoom(Some(&payload(8801, 0x15, [0; 3], 1200))), SubflowKind::Probe);
        // Small 0x15 packets fall through to control.
        assert_eq!(classify_zoom(Some(&payload(8801, 0x15, [0; 3], 600))), SubflowKind::Control);
        assert_eq!(classify_zoom(Some(&payload(8801, 0x15, [0; 3], 1000))), SubflowKind::Control);
    }

    #[test]
    fn malformed_and_ipv6_are_background() {
        assert_eq!(classify_zoom(Some(&payload(8801, 0x0f, [0; 3], 4))), SubflowKind::Background);
        let mut p = payload(8801, 0x0f, [0; 3], 200);
        p.is_ipv4 = false;
        assert_eq!(classify_zoom(Some(&p)), SubflowKind::Background);
    }

    #[test]
    fn unknown_type_is_control() {
        assert_eq!(classify_zoom(Some(&payload(8801, 0x13, [0; 3], 100))), SubflowKind::Control);
    }

    #[test]
    fn src_port_match_also_counts() {
        let mut p = payload(443, 0x0f, [0; 3], 200);
        p.src_port = 8801;
        assert_eq!(classify_zoom(Some(&p)), SubflowKind::Audio);
    }

    #[test]
    fn registry_has_zoom_builtin() {
        let reg = DpiRegistry::default();
        assert!(reg.get("zoom").is_some());
        assert!(reg.get("webex").is_none());
    }

    proptest! {
        // Totality over arbitrary wire bytes: classification never panics
        // and always lands on one kind.
        #[test]
        fn classify_total(
            src in proptest::num::u16::ANY,
            dst in proptest::num::u16::ANY,
            ipv4 in proptest::bool::ANY,
            ty in proptest::num::u8::ANY,
            ext in proptest::array::uniform3(proptest::num::u8::ANY),
            len in 0u32..65536,
        ) {
            let p = ZoomWirePayload {
                src_port: src,
                dst_port: dst,
                is_ipv4: ipv4,
                zoom_pkt_type: ty,
                first_extension_data: ext,
                payload_len: len,
            };
            let _ = classify_zoom(Some(&p));
        }
    }
}
