use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use super::field::{CompiledModel, FieldModel};
use super::innovation::{Drawer, InnovationSpec};
use crate::error::{Error, Result};
use crate::lattice::{IndexVec, Rect};
use crate::rng::{derive_seed, CellStream, SeedRole};

/// Where the values of the frozen quadrant come from.
#[derive(Clone, Debug, PartialEq)]
pub enum PastSource {
    /// Regenerated from a dedicated stream key.
    Seeded(u64),
    /// Explicit values on `rect`, one row-major array per channel.
    Stored { rect: Rect, channels: Vec<Vec<f64>> },
}

/// A frozen past: every cell `w <= anchor` keeps the same value in every
/// replicate.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenPast {
    pub anchor: IndexVec,
    pub source: PastSource,
}

impl FrozenPast {
    pub fn seeded(anchor: IndexVec, key: u64) -> Self {
        FrozenPast {
            anchor,
            source: PastSource::Seeded(key),
        }
    }

    pub fn contains(&self, k: &[i64]) -> bool {
        k.iter().zip(self.anchor.coords()).all(|(a, b)| a <= b)
    }
}

/// Identifies the random stream that produced a lattice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub base_seed: u64,
    pub replicate: u64,
}

/// Realized innovations on a finite window, one array per channel.
#[derive(Clone, Debug)]
pub struct InnovationLattice {
    pub window: Rect,
    pub channels: Vec<Vec<f64>>,
    pub frozen: Option<FrozenPast>,
    pub seed: SeedRecord,
}

impl InnovationLattice {
    pub fn value(&self, channel: usize, k: &IndexVec) -> Result<f64> {
        if !self.window.contains(k) {
            return Err(Error::Range(format!("site {k} outside lattice window {}", self.window)));
        }
        Ok(self.channels[channel][self.window.linear_index(k)])
    }

    pub fn as_array(&self, channel: usize) -> ArrayD<f64> {
        ArrayD::from_shape_vec(IxDyn(&self.window.shape()), self.channels[channel].clone())
            .expect("lattice shape")
    }

    /// Lattice built from explicit values (tests and examples).
    pub fn from_values(window: Rect, channels: Vec<Vec<f64>>) -> Result<Self> {
        for c in &channels {
            if c.len() != window.volume() {
                return Err(Error::Structural(format!(
                    "{} values for a window of volume {}",
                    c.len(),
                    window.volume()
                )));
            }
        }
        Ok(InnovationLattice {
            window,
            channels,
            frozen: None,
            seed: SeedRecord {
                base_seed: 0,
                replicate: 0,
            },
        })
    }
}

/// Prepared per-channel samplers.
#[derive(Clone, Debug)]
pub struct ChannelSamplers {
    drawers: Vec<Drawer>,
}

impl ChannelSamplers {
    pub fn new(specs: &[InnovationSpec]) -> Result<Self> {
        Ok(ChannelSamplers {
            drawers: specs.iter().map(|s| s.drawer()).collect::<Result<_>>()?,
        })
    }

    pub fn len(&self) -> usize {
        self.drawers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.drawers.is_empty()
    }
}

/// Draw innovations on `window`. The replicate stream key is
/// `derive_seed(base_seed, Replicate, replicate)`; cells of the frozen past
/// take their values from the past source instead.
pub fn sample_innovations(
    window: &Rect,
    samplers: &ChannelSamplers,
    base_seed: u64,
    replicate: u64,
    frozen: Option<&FrozenPast>,
) -> Result<InnovationLattice> {
    let mut out = InnovationLattice {
        window: window.clone(),
        channels: Vec::new(),
        frozen: frozen.cloned(),
        seed: SeedRecord {
            base_seed,
            replicate,
        },
    };
    sample_into(&mut out, samplers, base_seed, replicate, frozen)?;
    Ok(out)
}

/// As [`sample_innovations`], reusing the buffers of `lattice`.
pub fn sample_into(
    lattice: &mut InnovationLattice,
    samplers: &ChannelSamplers,
    base_seed: u64,
    replicate: u64,
    frozen: Option<&FrozenPast>,
) -> Result<()> {
    let window = lattice.window.clone();
    if window.is_empty() {
        return Err(Error::Parameter(format!("window {window} is empty")));
    }
    let d = window.dim();
    if d > 8 {
        return Err(Error::Structural(format!("dimension {d} above 8")));
    }
    if let Some(f) = frozen {
        if f.anchor.dim() != d {
            return Err(Error::Structural("frozen anchor dimension mismatch".into()));
        }
        if let PastSource::Stored { rect, channels } = &f.source {
            if !window.contains_rect(rect) {
                return Err(Error::Range(format!(
                    "stored frozen region {rect} is not inside the window {window}"
                )));
            }
            if channels.len() < samplers.len() || channels.iter().any(|c| c.len() != rect.volume()) {
                return Err(Error::Structural("stored past has the wrong shape".into()));
            }
            let covered = window
                .points()
                .filter(|p| f.contains(p.coords()))
                .all(|p| rect.contains(&p));
            if !covered {
                return Err(Error::Range(format!(
                    "stored frozen region {rect} does not cover the frozen part of {window}"
                )));
            }
        }
    }
    let stream = CellStream::new(derive_seed(base_seed, SeedRole::Replicate, replicate));
    let shape = window.shape();
    let row_len = shape[d - 1];
    let rows = window.volume() / row_len;
    let lo = window.lo().coords().to_vec();
    lattice.channels.resize(samplers.len(), Vec::new());
    lattice.frozen = frozen.cloned();
    lattice.seed = SeedRecord {
        base_seed,
        replicate,
    };
    for (ch, drawer) in samplers.drawers.iter().enumerate() {
        let buf = &mut lattice.channels[ch];
        buf.resize(window.volume(), 0.0);
        let mut prefix: Vec<i64> = lo[..d - 1].to_vec();
        for r in 0..rows {
            let row = &mut buf[r * row_len..(r + 1) * row_len];
            drawer.fill_row(&stream, ch, &prefix, lo[d - 1], row);
            if let Some(f) = frozen {
                let in_prefix = prefix
                    .iter()
                    .zip(f.anchor.coords())
                    .all(|(a, b)| a <= b);
                if in_prefix {
                    let last_anchor = f.anchor.get(d - 1);
                    let count = (last_anchor - lo[d - 1] + 1).clamp(0, row_len as i64) as usize;
                    if count > 0 {
                        match &f.source {
                            PastSource::Seeded(key) => {
                                let past = CellStream::new(*key);
                                drawer.fill_row(&past, ch, &prefix, lo[d - 1], &mut row[..count]);
                            }
                            PastSource::Stored { rect, channels } => {
                                let mut p = prefix.clone();
                                p.push(0);
                                for (i, v) in row[..count].iter_mut().enumerate() {
                                    p[d - 1] = lo[d - 1] + i as i64;
                                    let k = IndexVec::from_slice(&p);
                                    *v = channels[ch][rect.linear_index(&k)];
                                }
                            }
                        }
                    }
                }
            }
            for axis in (0..d - 1).rev() {
                prefix[axis] += 1;
                if prefix[axis] < window.hi().get(axis) {
                    break;
                }
                prefix[axis] = lo[axis];
            }
        }
    }
    Ok(())
}

impl CompiledModel {
    /// Smallest lattice window on which the field can be evaluated over
    /// `window`.
    pub fn required_window(&self, window: &Rect) -> Result<Rect> {
        let ext = self.offset_extent();
        let lo: Vec<i64> = (0..self.dim).map(|a| window.lo().get(a) - ext[a].1).collect();
        let hi: Vec<i64> = (0..self.dim).map(|a| window.hi().get(a) - ext[a].0).collect();
        Rect::new(lo, hi)
    }

    fn check_fits(&self, lattice: &InnovationLattice, window: &Rect) -> Result<()> {
        if window.dim() != self.dim || lattice.window.dim() != self.dim {
            return Err(Error::Structural("window dimension does not match the model".into()));
        }
        if window.is_empty() {
            return Ok(());
        }
        let need = self.required_window(window)?;
        if !lattice.window.contains_rect(&need) {
            return Err(Error::Range(format!(
                "field on {window} reads {need}, outside the lattice window {}",
                lattice.window
            )));
        }
        if lattice.channels.len() < self.channels() {
            return Err(Error::Structural(format!(
                "model reads {} channels, lattice has {}",
                self.channels(),
                lattice.channels.len()
            )));
        }
        Ok(())
    }

    /// `X_k` for one site.
    pub fn eval_at(&self, lattice: &InnovationLattice, k: &IndexVec) -> Result<f64> {
        let w = Rect::new(k.clone(), k.add(&IndexVec::splat(self.dim, 1)))?;
        self.check_fits(lattice, &w)?;
        let get = |s: u32| {
            let site = &self.sites[s as usize];
            let p = k.sub(&site.offset);
            lattice.channels[site.channel][lattice.window.linear_index(&p)]
        };
        Ok(self.node.eval_f64(&get))
    }

    /// `X_k` for every `k` in `window`, row-major.
    pub fn field_values(&self, lattice: &InnovationLattice, window: &Rect) -> Result<Vec<f64>> {
        let mut out = vec![0.0; window.volume()];
        self.field_values_into(lattice, window, &mut out)?;
        Ok(out)
    }

    pub fn field_values_into(
        &self,
        lattice: &InnovationLattice,
        window: &Rect,
        out: &mut [f64],
    ) -> Result<()> {
        self.check_fits(lattice, window)?;
        if out.len() != window.volume() {
            return Err(Error::Structural("output buffer has the wrong length".into()));
        }
        if window.is_empty() {
            return Ok(());
        }
        let d = self.dim;
        let strides = lattice.window.strides();
        let deltas: Vec<isize> = self
            .sites
            .iter()
            .map(|s| {
                s.offset
                    .coords()
                    .iter()
                    .zip(&strides)
                    .map(|(o, st)| *o as isize * *st as isize)
                    .sum()
            })
            .collect();
        let chans: Vec<&[f64]> = self
            .sites
            .iter()
            .map(|s| lattice.channels[s.channel].as_slice())
            .collect();
        let shape = window.shape();
        let row_len = shape[d - 1];
        let rows = window.volume() / row_len;
        let mut k = window.lo().clone();
        for r in 0..rows {
            let base = lattice.window.linear_index(&k) as isize;
            let dst = &mut out[r * row_len..(r + 1) * row_len];
            for (i, o) in dst.iter_mut().enumerate() {
                let b = base + i as isize;
                let get = |s: u32| chans[s as usize][(b - deltas[s as usize]) as usize];
                *o = self.node.eval_f64(&get);
            }
            for axis in (0..d - 1).rev() {
                let v = k.get(axis) + 1;
                if v < window.hi().get(axis) {
                    k.set(axis, v);
                    break;
                }
                k.set(axis, window.lo().get(axis));
            }
        }
        Ok(())
    }
}

/// `X_k` for one site.
pub fn eval_field(model: &FieldModel, lattice: &InnovationLattice, k: &IndexVec) -> Result<f64> {
    model.compile()?.eval_at(lattice, k)
}

/// `X_k` for every `k` in `window`, as a d-dimensional array.
pub fn field_window(model: &FieldModel, lattice: &InnovationLattice, window: &Rect) -> Result<ArrayD<f64>> {
    let v = model.compile()?.field_values(lattice, window)?;
    Ok(ArrayD::from_shape_vec(IxDyn(&window.shape()), v).expect("window shape"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::field::{FieldKind, ScaleField};
    use crate::models::kernel::{Kernel, VolterraCoeffs};

    fn iv<const N: usize>(a: [i64; N]) -> IndexVec {
        IndexVec::from(a)
    }

    fn samplers(m: &FieldModel) -> ChannelSamplers {
        ChannelSamplers::new(&m.channel_specs().unwrap()).unwrap()
    }

    #[test]
    fn linear_substitution_example() {
        let k = Kernel::new(2, [(iv([0, 0]), 1.0), (iv([1, 0]), 0.5)]).unwrap();
        let m = FieldModel::linear(InnovationSpec::Rademacher, k);
        let w = Rect::new([0, 0], [4, 5]).unwrap();
        let mut vals = vec![0.0; 20];
        vals[w.linear_index(&iv([2, 3]))] = 1.0;
        vals[w.linear_index(&iv([1, 3]))] = -1.0;
        let lat = InnovationLattice::from_values(w, vec![vals]).unwrap();
        assert_eq!(eval_field(&m, &lat, &iv([2, 3])).unwrap(), 0.5);
    }

    #[test]
    fn volterra_substitution_example() {
        let c = VolterraCoeffs::new(2, [(iv([1, 0]), iv([0, 1]), 2.0)]).unwrap();
        let m = FieldModel::volterra(InnovationSpec::Rademacher, c);
        let w = Rect::new([-1, -1], [1, 1]).unwrap();
        let mut vals = vec![0.0; 4];
        vals[w.linear_index(&iv([-1, 0]))] = 1.0;
        vals[w.linear_index(&iv([0, -1]))] = -1.0;
        let lat = InnovationLattice::from_values(w, vec![vals]).unwrap();
        assert_eq!(eval_field(&m, &lat, &iv([0, 0])).unwrap(), -2.0);
    }

    #[test]
    fn footprint_escape_is_range_error() {
        let k = Kernel::new(2, [(iv([0, 0]), 1.0), (iv([1, 0]), 0.5)]).unwrap();
        let m = FieldModel::linear(InnovationSpec::Rademacher, k);
        let w = Rect::new([0, 0], [3, 3]).unwrap();
        let lat = InnovationLattice::from_values(w, vec![vec![1.0; 9]]).unwrap();
        assert!(matches!(eval_field(&m, &lat, &iv([0, 1])), Err(Error::Range(_))));
    }

    #[test]
    fn iid_window_is_the_innovations() {
        let m = FieldModel::iid(2, InnovationSpec::Rademacher);
        let w = Rect::new([0, 0], [5, 7]).unwrap();
        let lat = sample_innovations(&w, &samplers(&m), 9, 0, None).unwrap();
        let f = field_window(&m, &lat, &w).unwrap();
        assert_eq!(f.as_slice().unwrap(), lat.channels[0].as_slice());
    }

    #[test]
    fn window_matches_cellwise_evaluation() {
        let k = Kernel::new(2, [(iv([0, 0]), 1.0), (iv([1, 0]), 0.5), (iv([0, 2]), -0.25)]).unwrap();
        let m = FieldModel::linear(InnovationSpec::Rademacher, k);
        let w = Rect::new([0, 0], [6, 6]).unwrap();
        let lw = m.compile().unwrap().required_window(&w).unwrap();
        let lat = sample_innovations(&lw, &samplers(&m), 4, 2, None).unwrap();
        let f = field_window(&m, &lat, &w).unwrap();
        for p in w.points() {
            let idx: Vec<usize> = p.coords().iter().map(|&c| c as usize).collect();
            assert_eq!(f[IxDyn(&idx)], eval_field(&m, &lat, &p).unwrap());
        }
    }

    #[test]
    fn frozen_quadrant_is_shared_and_future_is_fresh() {
        let m = FieldModel::product_omd(
            2,
            InnovationSpec::Rademacher,
            ScaleField::TwoLevel {
                low: 1.0,
                high: 4.0,
                taps: vec![vec![0, 0]],
                channel: 1,
            },
        );
        let w = Rect::new([-4, -4], [4, 4]).unwrap();
        let past = FrozenPast::seeded(iv([0, 0]), 77);
        let s = samplers(&m);
        let a = sample_innovations(&w, &s, 5, 1, Some(&past)).unwrap();
        let b = sample_innovations(&w, &s, 5, 2, Some(&past)).unwrap();
        let mut differ = 0;
        for p in w.points() {
            let i = w.linear_index(&p);
            for ch in 0..2 {
                if past.contains(p.coords()) {
                    assert_eq!(a.channels[ch][i].to_bits(), b.channels[ch][i].to_bits());
                } else if a.channels[ch][i] != b.channels[ch][i] {
                    differ += 1;
                }
            }
        }
        assert!(differ > 20);
    }

    #[test]
    fn stored_past_outside_window_is_range_error() {
        let m = FieldModel::iid(2, InnovationSpec::Rademacher);
        let w = Rect::new([0, 0], [3, 3]).unwrap();
        let rect = Rect::new([-1, -1], [1, 1]).unwrap();
        let past = FrozenPast {
            anchor: iv([0, 0]),
            source: PastSource::Stored {
                rect,
                channels: vec![vec![1.0; 4]],
            },
        };
        assert!(matches!(
            sample_innovations(&w, &samplers(&m), 1, 0, Some(&past)),
            Err(Error::Range(_))
        ));
    }

    #[test]
    fn stored_past_values_are_used() {
        let m = FieldModel::iid(2, InnovationSpec::Rademacher);
        let w = Rect::new([-1, -1], [2, 2]).unwrap();
        let rect = Rect::new([-1, -1], [1, 1]).unwrap();
        let past = FrozenPast {
            anchor: iv([0, 0]),
            source: PastSource::Stored {
                rect: rect.clone(),
                channels: vec![vec![7.0, 8.0, 9.0, 10.0]],
            },
        };
        let lat = sample_innovations(&w, &samplers(&m), 1, 0, Some(&past)).unwrap();
        assert_eq!(lat.value(0, &iv([0, 0])).unwrap(), 10.0);
        assert_eq!(lat.value(0, &iv([-1, 0])).unwrap(), 8.0);
    }

    #[test]
    fn coboundary_zero_parts_reduce_to_m() {
        let m = FieldModel::new(
            2,
            InnovationSpec::Rademacher,
            FieldKind::Coboundary(Box::new(crate::models::field::CoboundarySpec {
                m: FieldKind::Iid,
                m_prime: FieldKind::Zero,
                m_second: FieldKind::Zero,
                y: FieldKind::Zero,
            })),
        )
        .unwrap();
        let w = Rect::new([0, 0], [4, 4]).unwrap();
        let lat = sample_innovations(&w, &samplers(&m), 3, 0, None).unwrap();
        let f = field_window(&m, &lat, &w).unwrap();
        assert_eq!(f.as_slice().unwrap(), lat.channels[0].as_slice());
    }
}
