//! Ready-made scenarios and configurations: a quiet baseline, the shipped
//! vaccine run, and adversarial schedules that drive the timing bounds to
//! their worst case.

use super::RunConfig;
use crate::chain::{ChainParams, GstMode};
use crate::device::DeviceConfig;
use crate::environment::{Scenario, TemperaturePoint, Waypoint};
use crate::network::ChannelConfig;
use crate::sampler::Sampler;
use crate::types::{Checkpoint, DeviceId, Light, Pattern, TemperatureBand};

pub const VACCINE_SCENARIO: &str = include_str!("../../../../scenarios/vaccine_shipment/scenario.toml");
pub const VACCINE_CONFIG: &str = include_str!("../../../../scenarios/vaccine_shipment/config.toml");

pub fn vaccine_shipment() -> (Scenario, RunConfig) {
    let scenario = Scenario::from_toml(VACCINE_SCENARIO).expect("shipped scenario parses");
    let config = RunConfig::from_toml(VACCINE_CONFIG).expect("shipped config parses");
    (scenario, config)
}

const SITE: (f64, f64) = (36.1, 120.4);

/// A closed box parked at a checkpoint at a steady 14 C.
pub fn quiet_scenario(duration_ms: u64) -> Scenario {
    Scenario {
        duration_ms,
        route: vec![Waypoint { t_ms: 0, lat: SITE.0, lon: SITE.1 }],
        temperature: vec![TemperaturePoint { t_ms: 0, celsius: 14.0 }],
        open_events: Vec::new(),
        ambient_lux_open: 10_000.0,
        ambient_lux_closed: 0.5,
        theta: 50.0,
        noise: None,
    }
}

pub fn site_pattern() -> Pattern {
    Pattern {
        permitted_light: vec![Light::Dark],
        temperature: TemperatureBand { min_c: 13.0, max_c: 15.0 },
        checkpoints: vec![Checkpoint { lat: SITE.0, lon: SITE.1, radius_m: 500.0 }],
    }
}

pub fn quiet_config() -> RunConfig {
    RunConfig {
        device: DeviceConfig {
            id: DeviceId::new("box-1"),
            delta_t_ms: 10_000,
            t0_ms: 0,
            max_fd: 5,
            clock_skew_ms: 0,
            eps1: Sampler::uniform(50.0, 158.0),
            theta: None,
            pattern: site_pattern(),
        },
        chain: ChainParams { n: 4, f: 1, gst: GstMode::Constant { delta_ms: 1_000.0 }, l_ms: 500.0, l1: None },
        channel: ChannelConfig::default(),
    }
}

/// Every upload reaches the agent 1 ms after a GST and the next block takes
/// the full L, with the device clock running |ε_s| behind: `T − t` lands
/// 1 ms under the event-to-availability bound.
pub fn consistency_probe() -> (Scenario, RunConfig) {
    let (eps1, eps2, gst, l, skew) = (158.0, 80.0, 5_000.0, 2_000.0, -50i64);
    let t0 = 5_001 - 238;
    let mut cfg = quiet_config();
    cfg.device.t0_ms = t0;
    cfg.device.clock_skew_ms = skew;
    cfg.device.eps1 = Sampler::constant(eps1);
    cfg.channel.eps2 = Sampler::constant(eps2);
    cfg.chain = ChainParams {
        n: 4,
        f: 1,
        gst: GstMode::Constant { delta_ms: gst },
        l_ms: l,
        l1: Some(Sampler::constant(l)),
    };
    (quiet_scenario(t0 + 10 * 10_000), cfg)
}

/// Best case followed by worst case: the first record arrives 1 µs before a
/// GST whose block takes 1 µs, the next arrives 1 µs after a GST and waits a
/// full ΔGST plus L. The commit gap lands 3 µs under the consecutive-commit
/// bound.
pub fn continuity_probe() -> (Scenario, RunConfig) {
    let mut cfg = quiet_config();
    cfg.device.t0_ms = 9_819;
    cfg.device.eps1 = Sampler::constant(100.997);
    cfg.channel.eps2 = Sampler::constant(80.0);
    cfg.chain = ChainParams {
        n: 4,
        f: 1,
        gst: GstMode::Constant { delta_ms: 4_999.999 },
        l_ms: 2_000.0,
        l1: Some(Sampler::Sequence { values_ms: vec![2_000.0, 0.001, 2_000.0] }),
    };
    (quiet_scenario(9_819 + 2 * 10_000), cfg)
}
