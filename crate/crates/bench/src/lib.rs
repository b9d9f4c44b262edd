//! Shared inputs for the criterion benches.

use mcf_qudit::measurement::CountsRecord;
use mcf_qudit::pipeline::{simulate, ExperimentConfig};
use mcf_qudit::tomography::{standard_settings, TomographyProtocol};

/// Paper preset with its simulated counts.
pub struct Fixture {
    pub config: ExperimentConfig,
    pub protocol: TomographyProtocol,
    pub counts: CountsRecord,
}

impl Fixture {
    pub fn paper() -> Self {
        let config = ExperimentConfig::preset("paper").expect("bundled preset");
        let protocol = standard_settings(config.dim()).expect("d = 4 protocol");
        let counts = simulate(&config).expect("simulated counts");
        Self {
            config,
            protocol,
            counts,
        }
    }
}
