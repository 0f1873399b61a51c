//! Fixtures shared by the criterion benchmarks.

use pat_core::pipeline::Setup;
use pat_core::{vessel_phantom, CSData, CSOperator, ExperimentConfig, Image, MeasKind, NetArch, NetParams, SensorData};

/// Desk-scale geometry with one phantom and its data, ready to benchmark.
pub struct Fixture {
    pub setup: Setup,
    pub op: CSOperator,
    pub phantom: Image,
    pub traces: SensorData,
    pub data: CSData,
    pub net: NetParams,
}

impl Fixture {
    pub fn desk(kind: MeasKind) -> Self {
        let cfg = ExperimentConfig::preset("paper-desk").expect("built-in preset");
        let setup = Setup::new(&cfg).expect("valid preset geometry");
        let op = setup.operator(kind).expect("valid measurement matrix");
        let phantom = vessel_phantom(&setup.grid, 1);
        let traces = setup.wave.forward(&phantom).expect("shapes match");
        let data = op.forward(&phantom).expect("shapes match");
        let net = NetParams::init(NetArch::default(), 0).expect("default arch is valid");
        Self {
            setup,
            op,
            phantom,
            traces,
            data,
            net,
        }
    }
}
