//! Datasets of (coefficients, solved kernels) pairs and their binary file format.
//!
//! Layout, little-endian throughout: magic `HKDS`, version `u32 = 1`, `n_samples u32`,
//! `m_coeff u32`, `n_grid u32`, then per sample in index order `q f64`, the
//! `lambda mu sigma omega theta` arrays (`m_coeff` f64 each), then `k1` and `k2`
//! flattened row by row over the triangular grid.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::{sample_random, CoefficientFamily, CoefficientSet};
use crate::error::{Error, Result};
use crate::kernels::{solve_kernels, KernelField, KernelSet};
use crate::numerics::{IntervalGrid, TriangularGrid};

pub const MAGIC: &[u8; 4] = b"HKDS";
pub const VERSION: u32 = 1;
const HEADER_BYTES: usize = 4 + 4 * 4;
/// Tolerance of the boundary-condition check in [`Dataset::validate`].
pub const BC_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub q: f64,
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub omega: Vec<f64>,
    pub theta: Vec<f64>,
    pub k1: Vec<f64>,
    pub k2: Vec<f64>,
}

impl Sample {
    fn from_parts(coeffs: &CoefficientSet, kernels: KernelSet) -> Self {
        Self {
            q: coeffs.q(),
            lambda: coeffs.lambda().to_vec(),
            mu: coeffs.mu().to_vec(),
            sigma: coeffs.sigma().to_vec(),
            omega: coeffs.omega().to_vec(),
            theta: coeffs.theta().to_vec(),
            k1: kernels.k1.into_values(),
            k2: kernels.k2.into_values(),
        }
    }

    /// Rebuilds the coefficient set. Derivatives of `lambda, mu` are not stored and
    /// are recovered by finite differences.
    pub fn coefficients(&self) -> Result<CoefficientSet> {
        CoefficientSet::from_values(
            IntervalGrid::with_nodes(self.lambda.len())?,
            self.lambda.clone(),
            self.mu.clone(),
            self.sigma.clone(),
            self.omega.clone(),
            self.theta.clone(),
            self.q,
        )
    }

    pub fn kernels(&self, grid: TriangularGrid) -> Result<KernelSet> {
        KernelSet::new(KernelField::new(grid, self.k1.clone())?, KernelField::new(grid, self.k2.clone())?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub m_coeff: usize,
    pub n_grid: usize,
    pub samples: Vec<Sample>,
}

/// Human-readable description written next to a dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub n_samples: usize,
    pub m_coeff: usize,
    pub n_grid: usize,
    pub seed: u64,
    pub family: CoefficientFamily,
    pub description: String,
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of sample `index`: `splitmix64(seed ^ index)`.
pub fn sample_seed(seed: u64, index: usize) -> u64 {
    splitmix64(seed ^ index as u64)
}

fn generate_one(family: &CoefficientFamily, index: usize, m_coeff: usize, grid: TriangularGrid, seed: u64) -> Result<Sample> {
    let run = || -> Result<Sample> {
        let coeffs = sample_random(family, sample_seed(seed, index), m_coeff)?;
        let ks = solve_kernels(&coeffs, grid)?;
        Ok(Sample::from_parts(&coeffs, ks))
    };
    run().map_err(|e| Error::Sample {
        index,
        source: Box::new(e),
    })
}

/// Generates `n_samples` records in parallel. Output is independent of the thread count.
pub fn generate(family: &CoefficientFamily, n_samples: usize, m_coeff: usize, n_grid: usize, seed: u64) -> Result<Dataset> {
    generate_with(family, n_samples, m_coeff, n_grid, seed, true)
}

/// Same as [`generate`], optionally on the calling thread only.
pub fn generate_with(
    family: &CoefficientFamily,
    n_samples: usize,
    m_coeff: usize,
    n_grid: usize,
    seed: u64,
    parallel: bool,
) -> Result<Dataset> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be at least 1".into()));
    }
    family.validate()?;
    IntervalGrid::with_nodes(m_coeff)?;
    let grid = TriangularGrid::new(n_grid)?;
    let samples = if parallel {
        (0..n_samples)
            .into_par_iter()
            .map(|i| generate_one(family, i, m_coeff, grid, seed))
            .collect::<Result<Vec<_>>>()?
    } else {
        (0..n_samples)
            .map(|i| generate_one(family, i, m_coeff, grid, seed))
            .collect::<Result<Vec<_>>>()?
    };
    Ok(Dataset {
        m_coeff,
        n_grid,
        samples,
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn grid(&self) -> Result<TriangularGrid> {
        TriangularGrid::new(self.n_grid)
    }

    fn record_len(&self) -> usize {
        1 + 5 * self.m_coeff + 2 * TriangularGrid::count_for(self.n_grid)
    }

    /// Subset in the given index order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            m_coeff: self.m_coeff,
            n_grid: self.n_grid,
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }

    /// Checks array lengths, finiteness and the two kernel boundary identities.
    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::InvalidArgument("dataset is empty".into()));
        }
        let grid = self.grid()?;
        let nodes = TriangularGrid::count_for(self.n_grid);
        for (index, s) in self.samples.iter().enumerate() {
            let check = || -> Result<()> {
                for a in [&s.lambda, &s.mu, &s.sigma, &s.omega, &s.theta] {
                    if a.len() != self.m_coeff {
                        return Err(Error::ShapeMismatch {
                            context: "dataset coefficient array",
                            expected: self.m_coeff,
                            actual: a.len(),
                        });
                    }
                }
                for k in [&s.k1, &s.k2] {
                    if k.len() != nodes {
                        return Err(Error::ShapeMismatch {
                            context: "dataset kernel array",
                            expected: nodes,
                            actual: k.len(),
                        });
                    }
                }
                let coeffs = s.coefficients()?;
                let (diag, bottom) = s.kernels(grid)?.boundary_residuals(&coeffs)?;
                if diag > BC_TOL || bottom > BC_TOL {
                    return Err(Error::InvalidArgument(format!(
                        "boundary identities violated: diagonal {diag:e}, bottom {bottom:e}"
                    )));
                }
                Ok(())
            };
            check().map_err(|e| Error::Sample {
                index,
                source: Box::new(e),
            })?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let count = |v: usize, what: &str| {
            u32::try_from(v).map_err(|_| Error::InvalidArgument(format!("{what} {v} does not fit in u32")))
        };
        let mut out = Vec::with_capacity(HEADER_BYTES + 8 * self.record_len() * self.len());
        out.extend_from_slice(MAGIC);
        for v in [
            VERSION,
            count(self.len(), "sample count")?,
            count(self.m_coeff, "m_coeff")?,
            count(self.n_grid, "n_grid")?,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let nodes = TriangularGrid::count_for(self.n_grid);
        for s in &self.samples {
            out.extend_from_slice(&s.q.to_le_bytes());
            let arrays = [
                (&s.lambda, self.m_coeff),
                (&s.mu, self.m_coeff),
                (&s.sigma, self.m_coeff),
                (&s.omega, self.m_coeff),
                (&s.theta, self.m_coeff),
                (&s.k1, nodes),
                (&s.k2, nodes),
            ];
            for (a, len) in arrays {
                if a.len() != len {
                    return Err(Error::ShapeMismatch {
                        context: "dataset record",
                        expected: len,
                        actual: a.len(),
                    });
                }
                for v in a.iter() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_BYTES {
            return Err(Error::Format(format!("truncated header: {} bytes", bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::Format(format!("bad magic {:?}, expected \"HKDS\"", &bytes[..4])));
        }
        let word = |k: usize| u32::from_le_bytes(bytes[4 + 4 * k..8 + 4 * k].try_into().unwrap()) as usize;
        let version = word(0) as u32;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported dataset version {version}")));
        }
        let (n_samples, m_coeff, n_grid) = (word(1), word(2), word(3));
        if m_coeff < 2 || n_grid < 1 {
            return Err(Error::Format(format!("invalid dimensions m_coeff = {m_coeff}, n_grid = {n_grid}")));
        }
        let mut ds = Dataset {
            m_coeff,
            n_grid,
            samples: Vec::with_capacity(n_samples),
        };
        let record = 8 * ds.record_len();
        let body = &bytes[HEADER_BYTES..];
        let expected = record
            .checked_mul(n_samples)
            .ok_or_else(|| Error::Format("sample count overflows".into()))?;
        if body.len() < expected {
            let index = body.len() / record;
            return Err(Error::Format(format!(
                "file truncated in record {index} of {n_samples} ({} of {expected} body bytes)",
                body.len()
            )));
        }
        if body.len() > expected {
            return Err(Error::Format(format!(
                "size mismatch: {} trailing bytes after {n_samples} records",
                body.len() - expected
            )));
        }
        let nodes = TriangularGrid::count_for(n_grid);
        for chunk in body.chunks_exact(record) {
            let mut vals = chunk.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap()));
            let mut take = |k: usize| vals.by_ref().take(k).collect::<Vec<f64>>();
            let q = take(1)[0];
            ds.samples.push(Sample {
                q,
                lambda: take(m_coeff),
                mu: take(m_coeff),
                sigma: take(m_coeff),
                omega: take(m_coeff),
                theta: take(m_coeff),
                k1: take(nodes),
                k2: take(nodes),
            });
        }
        Ok(ds)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

impl Manifest {
    pub fn new(ds: &Dataset, family: &CoefficientFamily, seed: u64) -> Self {
        Self {
            n_samples: ds.len(),
            m_coeff: ds.m_coeff,
            n_grid: ds.n_grid,
            seed,
            family: family.clone(),
            description: family.describe(),
        }
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// `<dataset path>.json`.
pub fn manifest_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Dataset {
        let fam = CoefficientFamily::RandomSmooth {
            gamma_min: 0.5,
            gamma_max: 3.0,
            amplitude: 0.3,
        };
        generate(&fam, 6, 21, 10, 7).unwrap()
    }

    #[test]
    fn splitmix_reference_values() {
        // First outputs of the SplitMix64 stream seeded with 0.
        assert_eq!(splitmix64(0), 0xE220_A839_7B1D_CDAF);
        assert_ne!(sample_seed(1, 0), sample_seed(1, 1));
    }

    #[test]
    fn generation_is_deterministic_and_thread_independent() {
        let fam = CoefficientFamily::Gamma {
            gamma_min: 0.5,
            gamma_max: 5.0,
        };
        let a = generate(&fam, 8, 101, 10, 42).unwrap();
        let b = generate_with(&fam, 8, 101, 10, 42, false).unwrap();
        assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
        assert_eq!(a.len(), 8);
        a.validate().unwrap();
    }

    #[test]
    fn bytes_round_trip_and_header_layout() {
        let ds = small();
        let bytes = ds.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"HKDS");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 6);
        assert_eq!(bytes.len(), 20 + 6 * 8 * (1 + 5 * 21 + 2 * 66));
        assert_eq!(Dataset::from_bytes(&bytes).unwrap(), ds);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = small().to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Dataset::from_bytes(&bad), Err(Error::Format(m)) if m.contains("magic")));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(Dataset::from_bytes(&bad), Err(Error::Format(m)) if m.contains("version")));
        let record = 8 * (1 + 5 * 21 + 2 * 66);
        let cut = &bytes[..20 + 3 * record + 17];
        assert!(matches!(Dataset::from_bytes(cut), Err(Error::Format(m)) if m.contains("record 3")));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(Dataset::from_bytes(&long), Err(Error::Format(m)) if m.contains("size mismatch")));
        assert!(Dataset::from_bytes(&bytes[..10]).is_err());
    }

    #[test]
    fn validate_rejects_broken_boundary_values() {
        let mut ds = small();
        ds.samples[2].k1[0] += 1.0;
        assert!(matches!(ds.validate(), Err(Error::Sample { index: 2, .. })));
    }

    #[test]
    fn zero_samples_rejected() {
        let fam = CoefficientFamily::Gamma {
            gamma_min: 1.0,
            gamma_max: 2.0,
        };
        assert!(generate(&fam, 0, 21, 10, 1).is_err());
    }
}
