//! Counter-based dropout masks.
//!
//! Each mask entry is a pure function of `(seed, step, example, site, index)`,
//! so training is reproducible regardless of evaluation order or threading.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DropoutKey {
    pub seed: u64,
    pub step: u64,
    pub example: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl DropoutKey {
    pub fn new(seed: u64, step: u64, example: u64) -> Self {
        Self {
            seed,
            step,
            example,
        }
    }

    fn stream(&self, site: u64) -> u64 {
        splitmix64(splitmix64(splitmix64(splitmix64(self.seed) ^ self.step) ^ self.example) ^ site)
    }

    /// Uniform in [0, 1) for entry `index` of dropout site `site`.
    pub fn uniform(&self, site: u64, index: u64) -> f64 {
        let bits = splitmix64(self.stream(site) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03));
        (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Inverted-dropout scale factors: 0 with probability `rate`, else `1/(1-rate)`.
    pub fn mask(&self, site: u64, len: usize, rate: f64) -> Vec<f64> {
        let keep = 1.0 / (1.0 - rate);
        let stream = self.stream(site);
        (0..len as u64)
            .map(|i| {
                let bits = splitmix64(stream ^ i.wrapping_mul(0xD1B5_4A32_D192_ED03));
                let u = (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
                if u < rate {
                    0.0
                } else {
                    keep
                }
            })
            .collect()
    }
}
