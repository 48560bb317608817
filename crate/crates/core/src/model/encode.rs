use crate::space::{ParamKind, ParamValue, ParameterSpec, SearchSpace};
use indexmap::IndexMap;

/// Feature encoding of configurations used by the surrogate models.
#[derive(Debug, Clone)]
pub struct Encoder {
    space: SearchSpace,
    width: usize,
}

impl Encoder {
    pub fn new(space: &SearchSpace) -> Self {
        let width = space
            .iter()
            .map(|p| match p.kind() {
                ParamKind::Choice(values) => values.len(),
                _ => 1,
            })
            .sum();
        Self { space: space.clone(), width }
    }

    pub fn space(&self) -> &SearchSpace {
        &self.space
    }

    /// Number of features after one-hot expansion.
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn encode(&self, values: &IndexMap<String, ParamValue>) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.width);
        for p in self.space.iter() {
            let v = &values[p.name()];
            match p.kind() {
                ParamKind::Choice(options) => {
                    let idx = p.choice_index(v).expect("choice value from the declared list");
                    out.extend((0..options.len()).map(|i| if i == idx { 1.0 } else { 0.0 }));
                }
                _ => out.push(p.to_unit(v).expect("numeric value")),
            }
        }
        out
    }

    /// Position of a value on its parameter's unit interval; choice values
    /// map to the centre of their cell.
    pub fn unit_coordinate(p: &ParameterSpec, v: &ParamValue) -> f64 {
        match p.kind() {
            ParamKind::Choice(options) => {
                let idx = p.choice_index(v).expect("declared choice");
                (idx as f64 + 0.5) / options.len() as f64
            }
            _ => p.to_unit(v).expect("numeric value"),
        }
    }

    /// Maps a point of the unit cube (one coordinate per parameter) to a configuration.
    pub fn decode_unit(&self, u: &[f64]) -> IndexMap<String, ParamValue> {
        self.space
            .iter()
            .zip(u)
            .map(|(p, &x)| (p.name().to_string(), p.from_unit(x)))
            .collect()
    }
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

const PRIMES: [u64; 32] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97,
    101, 103, 107, 109, 113, 127, 131,
];

/// `i`-th point (1-based internally) of the Halton sequence in `dim`
/// dimensions. Dimensions past the prime table reuse bases with a skip.
pub fn halton(i: u64, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|d| {
            let base = PRIMES[d % PRIMES.len()];
            let skip = (d / PRIMES.len()) as u64 * 409;
            radical_inverse(i + 1 + skip, base)
        })
        .collect()
}
