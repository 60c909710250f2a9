//! Synthetic letter-scene instances: a binary letter image, per-view rigid
//! stroke deformations, bounded local scrambles, Gaussian measurements, and
//! calibrated noise.
//!
//! Generation is pure given a seed; every random draw comes from a stream
//! derived with [`crate::seeds::derive_seed`], so instances for different
//! seeds can be built concurrently and rebuilt bit for bit.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use ndarray::Array1;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::metrics::noise_for_snr;
use crate::seeds::{derive_seed, rng_from_seed};
use crate::signal::{Signal, SupportSet};
use crate::view::{DeformationOp, LinearMeasurementOp, ViewData};

/// Schema tag written into every serialized instance file.
pub const INSTANCE_SCHEMA: &str = "mvot-instance-v1";

/// Letter shapes available for scenes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Letter {
    E,
    T,
}

impl std::fmt::Display for Letter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Letter::E => write!(f, "E"),
            Letter::T => write!(f, "T"),
        }
    }
}

impl std::str::FromStr for Letter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "E" | "e" => Ok(Letter::E),
            "T" | "t" => Ok(Letter::T),
            other => Err(Error::config(format!(
                "unknown letter {other:?}; expected E or T"
            ))),
        }
    }
}

/// Letters are drawn in a fixed design box centered in the grid.
const DESIGN_ROWS: usize = 12;
const DESIGN_COLS: usize = 8;

/// A letter scene: which letter, on what grid, at what reflectivity level,
/// partitioned into strokes (the rigid bodies of the deformation model).
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    letter: Letter,
    grid: Grid,
    level: f64,
    components: Vec<SupportSet>,
}

/// Axis-aligned stroke rectangle, in design-box coordinates.
fn stroke(
    grid: Grid,
    row_off: usize,
    col_off: usize,
    rows: std::ops::Range<usize>,
    cols: std::ops::Range<usize>,
) -> SupportSet {
    let mut indices = Vec::with_capacity(rows.len() * cols.len());
    for r in rows {
        for c in cols.clone() {
            indices.push(grid.index(row_off + r, col_off + c));
        }
    }
    SupportSet::new(indices).expect("stroke rectangles are nonempty")
}

fn letter_components(letter: Letter, grid: Grid) -> Result<Vec<SupportSet>> {
    if grid.rows() < DESIGN_ROWS || grid.cols() < DESIGN_COLS {
        return Err(Error::LetterDoesNotFit {
            rows: grid.rows(),
            cols: grid.cols(),
            min_rows: DESIGN_ROWS,
            min_cols: DESIGN_COLS,
        });
    }
    let r0 = (grid.rows() - DESIGN_ROWS) / 2;
    let c0 = (grid.cols() - DESIGN_COLS) / 2;
    let s = |rows, cols| stroke(grid, r0, c0, rows, cols);
    Ok(match letter {
        // Spine plus three arms, four strokes, 60 pixels.
        Letter::E => vec![s(0..12, 0..2), s(0..2, 2..8), s(5..7, 2..8), s(10..12, 2..8)],
        // Top bar plus stem, two strokes, 36 pixels.
        Letter::T => vec![s(0..2, 0..8), s(2..12, 3..5)],
    })
}

impl SceneSpec {
    /// Builds a scene description and its stroke partition.
    pub fn new(letter: Letter, grid: Grid, level: f64) -> Result<Self> {
        if !(level > 0.0 && level.is_finite()) {
            return Err(Error::config(format!(
                "reflectivity level must be positive and finite, got {level}"
            )));
        }
        let components = letter_components(letter, grid)?;
        Ok(Self {
            letter,
            grid,
            level,
            components,
        })
    }

    /// The default experimental scene: a 16x32 grid (512 pixels) at level 1.
    pub fn standard(letter: Letter) -> Self {
        let grid = Grid::new(16, 32).expect("static dimensions");
        Self::new(letter, grid, 1.0).expect("both letters fit the default grid")
    }

    pub fn letter(&self) -> Letter {
        self.letter
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn level(&self) -> f64 {
        self.level
    }

    /// Disjoint stroke supports whose union is the scene support.
    pub fn components(&self) -> &[SupportSet] {
        &self.components
    }

    /// Union of the stroke supports.
    pub fn support(&self) -> SupportSet {
        let mut indices: Vec<usize> = self
            .components
            .iter()
            .flat_map(|c| c.indices().iter().copied())
            .collect();
        indices.sort_unstable();
        SupportSet::new(indices).expect("scene support is nonempty")
    }
}

/// How much the unknown and the known rearrangements may move pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbSpec {
    /// Maximum Euclidean grid displacement of the unknown local scramble.
    pub displacement_radius: usize,
    /// Maximum per-axis magnitude of each stroke's rigid shift.
    pub max_component_shift: usize,
}

impl PerturbSpec {
    pub fn new(displacement_radius: usize, max_component_shift: usize) -> Self {
        Self {
            displacement_radius,
            max_component_shift,
        }
    }
}

/// Renders the scene: `level` on the letter support, zero elsewhere.
///
/// Current scenes are deterministic; the generator argument keeps the
/// signature uniform with the other builders, which do draw from it.
pub fn make_scene<R: Rng + ?Sized>(spec: &SceneSpec, _rng: &mut R) -> Signal {
    let mut values = Array1::zeros(spec.grid.len());
    for component in &spec.components {
        for &n in component.indices() {
            values[n] = spec.level;
        }
    }
    Signal::new(spec.grid, values).expect("component indices lie inside the grid")
}

/// Builds the permutation that moves each component rigidly by its shift.
///
/// Background pixels overwritten by a shifted stroke are matched, in index
/// order, to the slots the strokes vacated; everything else stays put.
/// Errors if a shift leaves the grid or two shifted strokes collide.
fn deformation_from_shifts(
    grid: Grid,
    components: &[SupportSet],
    shifts: &[(i64, i64)],
) -> Result<DeformationOp> {
    let n = grid.len();
    let mut source_of = vec![usize::MAX; n];
    let mut is_source = vec![false; n];
    for component in components {
        for &s in component.indices() {
            is_source[s] = true;
        }
    }
    for (component, &(dr, dc)) in components.iter().zip(shifts) {
        for &s in component.indices() {
            let (r, c) = grid.position(s);
            let (tr, tc) = (r as i64 + dr, c as i64 + dc);
            if !grid.contains(tr, tc) {
                return Err(Error::config(format!(
                    "shift ({dr}, {dc}) moves pixel ({r}, {c}) off the grid"
                )));
            }
            let target = grid.index(tr as usize, tc as usize);
            if source_of[target] != usize::MAX {
                return Err(Error::config(format!(
                    "shifted components collide at pixel {target}"
                )));
            }
            source_of[target] = s;
        }
    }
    let vacated = (0..n).filter(|&d| source_of[d] == usize::MAX && is_source[d]);
    let displaced = (0..n).filter(|&d| source_of[d] != usize::MAX && !is_source[d]);
    // Both filters have the same cardinality: each counts support-minus-target
    // overlap from one side.
    let mut perm = vec![usize::MAX; n];
    for (dest, source) in vacated.zip(displaced) {
        perm[dest] = source;
    }
    for d in 0..n {
        if perm[d] == usize::MAX {
            perm[d] = if source_of[d] != usize::MAX { source_of[d] } else { d };
        }
    }
    DeformationOp::from_permutation(perm)
}

const PLACEMENT_ATTEMPTS: usize = 100;

/// Samples a rigid per-stroke shift pattern and returns the resulting hard
/// permutation. Shifts are drawn uniformly from the per-axis range that keeps
/// each stroke inside the grid, capped at `max_component_shift`; colliding
/// patterns are re-drawn.
pub fn make_deformation<R: Rng + ?Sized>(
    scene: &SceneSpec,
    perturb: &PerturbSpec,
    rng: &mut R,
) -> Result<DeformationOp> {
    let grid = scene.grid;
    let cap = perturb.max_component_shift as i64;
    let mut ranges = Vec::with_capacity(scene.components.len());
    for component in &scene.components {
        let (mut r_min, mut r_max, mut c_min, mut c_max) = (usize::MAX, 0usize, usize::MAX, 0usize);
        for &s in component.indices() {
            let (r, c) = grid.position(s);
            r_min = r_min.min(r);
            r_max = r_max.max(r);
            c_min = c_min.min(c);
            c_max = c_max.max(c);
        }
        let dr_lo = (-(r_min as i64)).max(-cap);
        let dr_hi = ((grid.rows() - 1 - r_max) as i64).min(cap);
        let dc_lo = (-(c_min as i64)).max(-cap);
        let dc_hi = ((grid.cols() - 1 - c_max) as i64).min(cap);
        ranges.push(((dr_lo, dr_hi), (dc_lo, dc_hi)));
    }
    for _ in 0..PLACEMENT_ATTEMPTS {
        let shifts: Vec<(i64, i64)> = ranges
            .iter()
            .map(|&((dr_lo, dr_hi), (dc_lo, dc_hi))| {
                (
                    rng.random_range(dr_lo..=dr_hi),
                    rng.random_range(dc_lo..=dc_hi),
                )
            })
            .collect();
        match deformation_from_shifts(grid, &scene.components, &shifts) {
            Ok(op) => return Ok(op),
            Err(Error::InvalidConfig(_)) => continue,
            Err(other) => return Err(other),
        }
    }
    Err(Error::NoCollisionFreePlacement {
        attempts: PLACEMENT_ATTEMPTS,
    })
}

/// Samples a hard permutation that fixes everything outside the
/// radius-dilation of `support` and moves no pixel farther than `radius` in
/// Euclidean grid distance.
///
/// Built from random transpositions: a swap is kept only if both pixels stay
/// within the radius of their original positions, so the bound holds after
/// every step by construction.
pub fn make_local_permutation<R: Rng + ?Sized>(
    grid: Grid,
    support: &SupportSet,
    radius: usize,
    rng: &mut R,
) -> DeformationOp {
    let n = grid.len();
    if radius == 0 {
        return DeformationOp::identity(n);
    }
    let r_sq = (radius * radius) as f64;
    let reach = radius as i64;
    let mut in_region = vec![false; n];
    for &s in support.indices() {
        let (r, c) = grid.position(s);
        for dr in -reach..=reach {
            for dc in -reach..=reach {
                if (dr * dr + dc * dc) as f64 > r_sq {
                    continue;
                }
                if grid.contains(r as i64 + dr, c as i64 + dc) {
                    in_region[grid.index((r as i64 + dr) as usize, (c as i64 + dc) as usize)] =
                        true;
                }
            }
        }
    }
    let candidates: Vec<usize> = (0..n).filter(|&i| in_region[i]).collect();
    let mut perm: Vec<usize> = (0..n).collect();
    if candidates.len() >= 2 {
        for _ in 0..8 * candidates.len() {
            let d1 = candidates[rng.random_range(0..candidates.len())];
            let d2 = candidates[rng.random_range(0..candidates.len())];
            if d1 == d2 {
                continue;
            }
            let (s1, s2) = (perm[d1], perm[d2]);
            if grid.sq_dist(d1, s2) <= r_sq && grid.sq_dist(d2, s1) <= r_sq {
                perm.swap(d1, d2);
            }
        }
    }
    DeformationOp::from_permutation(perm).expect("swaps preserve bijectivity")
}

/// One view's measurement: the operator, the observation, and the noise that
/// was added, kept so `y = A x + noise` stays reproducible bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub y: Array1<f64>,
    pub a: LinearMeasurementOp,
    pub noise: Array1<f64>,
}

/// Draws a Gaussian operator with `round(rate * N)` rows (half-up) and
/// entry variance `1/N`, then measures `x_i_true` at the requested SNR.
pub fn make_measurement<R: Rng + ?Sized>(
    x_i_true: &Signal,
    rate: f64,
    snr_db: f64,
    rng: &mut R,
) -> Result<Measurement> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::config(format!(
            "measurement rate must lie in (0, 1], got {rate}"
        )));
    }
    if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
        return Err(Error::config(format!("invalid SNR {snr_db}")));
    }
    let n = x_i_true.len();
    let m = (rate * n as f64 + 0.5).floor() as usize;
    if m == 0 {
        return Err(Error::ZeroRows { rate });
    }
    let a = LinearMeasurementOp::gaussian(m, n, rng)?;
    let clean = a.apply(x_i_true.values());
    let noise = noise_for_snr(&clean, snr_db, rng)?;
    let y = &clean + &noise;
    Ok(Measurement { y, a, noise })
}

/// Serde adapter keeping stored noise vectors as plain nested JSON lists.
mod noise_serde {
    use ndarray::Array1;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(
        noise: &[Array1<f64>],
        serializer: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        let lists: Vec<&[f64]> = noise
            .iter()
            .map(|v| v.as_slice().expect("owned arrays are contiguous"))
            .collect();
        lists.serialize(serializer)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<Vec<Array1<f64>>, D::Error> {
        let lists = Vec::<Vec<f64>>::deserialize(deserializer)?;
        Ok(lists.into_iter().map(Array1::from_vec).collect())
    }
}

/// Fixed experimental knobs recorded with every instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceMetadata {
    pub seed: u64,
    pub views: usize,
    pub rate: f64,
    #[serde(with = "crate::metrics::snr_serde")]
    pub snr_db: f64,
    pub displacement_radius: usize,
    pub max_component_shift: usize,
    pub letter: Letter,
    pub level: f64,
}

/// A complete synthetic experiment: ground truth, per-view observations, and
/// the hidden rearrangements, so recovery error can be scored afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    schema: String,
    pub x_true: Signal,
    pub views: Vec<ViewData>,
    pub p_true: Vec<DeformationOp>,
    pub x_i_true: Vec<Signal>,
    #[serde(with = "noise_serde")]
    pub noise: Vec<Array1<f64>>,
    pub metadata: InstanceMetadata,
}

impl Instance {
    /// Internal consistency: matching counts and dimensions, and the stored
    /// observation equal to measurement plus stored noise.
    pub fn validate(&self) -> Result<()> {
        if self.schema != INSTANCE_SCHEMA {
            return Err(Error::config(format!(
                "unsupported instance schema {:?}, expected {INSTANCE_SCHEMA:?}",
                self.schema
            )));
        }
        let k = self.metadata.views;
        if self.views.len() != k
            || self.p_true.len() != k
            || self.x_i_true.len() != k
            || self.noise.len() != k
        {
            return Err(Error::dim(format!(
                "metadata promises {k} views, found {}/{}/{}/{}",
                self.views.len(),
                self.p_true.len(),
                self.x_i_true.len(),
                self.noise.len()
            )));
        }
        let n = self.x_true.len();
        for (i, view) in self.views.iter().enumerate() {
            if view.n() != n {
                return Err(Error::dim(format!("view {i} has width {}, expected {n}", view.n())));
            }
            if self.p_true[i].n() != n || !self.p_true[i].is_permutation() {
                return Err(Error::config(format!("stored scramble {i} is not a permutation")));
            }
            if self.x_i_true[i].grid() != self.x_true.grid() {
                return Err(Error::dim(format!("view signal {i} grid differs from scene grid")));
            }
            if self.noise[i].len() != view.y().len() {
                return Err(Error::dim(format!("noise {i} length differs from observation")));
            }
            let expected = &view.a().apply(self.x_i_true[i].values()) + &self.noise[i];
            if expected
                .iter()
                .zip(view.y())
                .any(|(e, y)| e.to_bits() != y.to_bits())
            {
                return Err(Error::config(format!(
                    "view {i}: stored observation is not measurement plus stored noise"
                )));
            }
        }
        Ok(())
    }

    /// Writes the instance as a single JSON document.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(BufWriter::new(file), self).map_err(|e| Error::serde(path, e))
    }

    /// Reads and validates an instance written by [`Instance::save`].
    pub fn load(path: &Path) -> Result<Instance> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let instance: Instance =
            serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::serde(path, e))?;
        instance.validate()?;
        Ok(instance)
    }
}

/// Assembles a full instance from one seed.
///
/// Per view `i`, the known deformation, the hidden scramble, and the
/// measurement each draw from their own stream derived from `(seed, label,
/// i)`, so changing one knob never shifts the randomness of another.
pub fn build_instance(
    scene: &SceneSpec,
    perturb: &PerturbSpec,
    k: usize,
    rate: f64,
    snr_db: f64,
    seed: u64,
) -> Result<Instance> {
    if k == 0 {
        return Err(Error::config("at least one view is required"));
    }
    let mut scene_rng = rng_from_seed(derive_seed(seed, &[b"scene"]));
    let x_true = make_scene(scene, &mut scene_rng);
    let mut views = Vec::with_capacity(k);
    let mut p_true = Vec::with_capacity(k);
    let mut x_i_true = Vec::with_capacity(k);
    let mut noise = Vec::with_capacity(k);
    for i in 0..k {
        let tag = (i as u64).to_le_bytes();
        let mut f_rng = rng_from_seed(derive_seed(seed, &[b"deformation", &tag]));
        let f = make_deformation(scene, perturb, &mut f_rng)?;
        let z = x_true.with_values(f.apply(x_true.values()))?;
        // The scramble acts on the deformed image, so its locality region
        // follows the moved letter, not the original one.
        let moved_support = SupportSet::new(z.indices_above(0.0))?;
        let mut p_rng = rng_from_seed(derive_seed(seed, &[b"scramble", &tag]));
        let p = make_local_permutation(
            scene.grid,
            &moved_support,
            perturb.displacement_radius,
            &mut p_rng,
        );
        let x_i = z.with_values(p.apply(z.values()))?;
        let mut m_rng = rng_from_seed(derive_seed(seed, &[b"measurement", &tag]));
        let measurement = make_measurement(&x_i, rate, snr_db, &mut m_rng)?;
        views.push(ViewData::new(measurement.y, measurement.a, f)?);
        p_true.push(p);
        x_i_true.push(x_i);
        noise.push(measurement.noise);
    }
    Ok(Instance {
        schema: INSTANCE_SCHEMA.to_string(),
        x_true,
        views,
        p_true,
        x_i_true,
        noise,
        metadata: InstanceMetadata {
            seed,
            views: k,
            rate,
            snr_db,
            displacement_radius: perturb.displacement_radius,
            max_component_shift: perturb.max_component_shift,
            letter: scene.letter,
            level: scene.level,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{realized_snr_db, NOISELESS_SNR_DB};
    use crate::ot::permutation_cost;

    fn temp_path(tag: &str) -> std::path::PathBuf {
        std::env::temp_dir().join(format!("mvot-synthdata-{}-{tag}.json", std::process::id()))
    }

    #[test]
    fn letter_t_is_binary_with_two_disjoint_strokes() {
        let spec = SceneSpec::standard(Letter::T);
        let mut rng = rng_from_seed(1);
        let scene = make_scene(&spec, &mut rng);
        assert!(scene.values().iter().all(|&v| v == 0.0 || v == 1.0));
        let support = spec.support();
        assert_eq!(support.len(), 36);
        assert_eq!(scene.values().iter().filter(|&&v| v > 0.0).count(), 36);
        assert_eq!(spec.components().len(), 2);
        let total: usize = spec.components().iter().map(|c| c.len()).sum();
        assert_eq!(total, support.len(), "strokes overlap");
    }

    #[test]
    fn letter_e_has_four_strokes() {
        let spec = SceneSpec::standard(Letter::E);
        assert_eq!(spec.components().len(), 4);
        assert_eq!(spec.support().len(), 60);
    }

    #[test]
    fn scene_generation_is_deterministic() {
        let spec = SceneSpec::standard(Letter::E);
        let a = make_scene(&spec, &mut rng_from_seed(7));
        let b = make_scene(&spec, &mut rng_from_seed(7));
        assert_eq!(a, b);
    }

    #[test]
    fn too_small_grid_is_rejected_with_minimum_dimensions() {
        let err = SceneSpec::new(Letter::E, Grid::new(8, 8).unwrap(), 1.0).unwrap_err();
        match err {
            Error::LetterDoesNotFit {
                min_rows, min_cols, ..
            } => {
                assert_eq!((min_rows, min_cols), (DESIGN_ROWS, DESIGN_COLS));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn zero_shift_ranges_give_the_identity() {
        let spec = SceneSpec::standard(Letter::E);
        let mut rng = rng_from_seed(2);
        let f = make_deformation(&spec, &PerturbSpec::new(0, 0), &mut rng).unwrap();
        assert_eq!(f, DeformationOp::identity(spec.grid().len()));
    }

    #[test]
    fn single_component_down_shift_is_a_cycle() {
        let grid = Grid::new(5, 1).unwrap();
        let comp = SupportSet::new(vec![0, 1, 2, 3]).unwrap();
        let f = deformation_from_shifts(grid, &[comp], &[(1, 0)]).unwrap();
        assert_eq!(f.permutation().unwrap(), &[4, 0, 1, 2, 3]);
        assert!(f.is_permutation());
        let m = f.to_matrix();
        for i in 0..5 {
            assert_eq!(m.row(i).sum(), 1.0);
            assert_eq!(m.column(i).sum(), 1.0);
        }
    }

    #[test]
    fn out_of_grid_and_colliding_shifts_are_rejected() {
        let grid = Grid::new(2, 2).unwrap();
        let a = SupportSet::new(vec![0]).unwrap();
        let b = SupportSet::new(vec![1]).unwrap();
        let err =
            deformation_from_shifts(grid, &[a.clone()], &[(-1, 0)]).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
        let err = deformation_from_shifts(grid, &[a, b], &[(0, 1), (0, 0)]).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
    }

    #[test]
    fn deformations_preserve_the_value_multiset() {
        let spec = SceneSpec::standard(Letter::T);
        let scene = make_scene(&spec, &mut rng_from_seed(3));
        for seed in 0..20 {
            let mut rng = rng_from_seed(1000 + seed);
            let f = make_deformation(&spec, &PerturbSpec::new(0, 3), &mut rng).unwrap();
            assert!(f.is_permutation());
            let moved = f.apply(scene.values());
            let mut before: Vec<u64> = scene.values().iter().map(|v| v.to_bits()).collect();
            let mut after: Vec<u64> = moved.iter().map(|v| v.to_bits()).collect();
            before.sort_unstable();
            after.sort_unstable();
            assert_eq!(before, after);
        }
    }

    #[test]
    fn impossible_placements_give_up_after_bounded_attempts() {
        // Deliberately violates the disjoint-components contract to force a
        // permanent collision; only the retry bound is under test here.
        let grid = Grid::new(12, 8).unwrap();
        let overlap = SupportSet::new(vec![0]).unwrap();
        let spec = SceneSpec {
            letter: Letter::E,
            grid,
            level: 1.0,
            components: vec![overlap.clone(), overlap],
        };
        let err = make_deformation(&spec, &PerturbSpec::new(0, 0), &mut rng_from_seed(4))
            .unwrap_err();
        assert!(matches!(
            err,
            Error::NoCollisionFreePlacement {
                attempts: PLACEMENT_ATTEMPTS
            }
        ));
    }

    #[test]
    fn zero_radius_scramble_is_the_identity() {
        let grid = Grid::new(6, 6).unwrap();
        let support = SupportSet::new(vec![14, 15, 20, 21]).unwrap();
        let p = make_local_permutation(grid, &support, 0, &mut rng_from_seed(5));
        assert_eq!(p, DeformationOp::identity(36));
    }

    #[test]
    fn scrambles_respect_the_displacement_radius() {
        let grid = Grid::new(8, 8).unwrap();
        let support = SupportSet::new(vec![18, 19, 26, 27, 34, 35]).unwrap();
        for radius in 1usize..=3 {
            let r_sq = (radius * radius) as f64;
            for seed in 0..50 {
                let mut rng = rng_from_seed(2000 + 100 * radius as u64 + seed);
                let p = make_local_permutation(grid, &support, radius, &mut rng);
                assert!(p.is_permutation());
                let perm = p.permutation().unwrap();
                let mut moved = 0usize;
                let mut cost_bound = 0.0;
                for (dest, &source) in perm.iter().enumerate() {
                    assert!(
                        grid.sq_dist(dest, source) <= r_sq,
                        "radius {radius}: pixel {source} traveled too far"
                    );
                    if dest != source {
                        moved += 1;
                        cost_bound += r_sq;
                    }
                }
                let cost = permutation_cost(&p.to_matrix(), grid).unwrap();
                assert!(cost <= cost_bound + 1e-12, "cost {cost} exceeds {moved} * r^2");
            }
        }
    }

    #[test]
    fn scrambles_fix_pixels_far_from_the_support() {
        let grid = Grid::new(10, 10).unwrap();
        let support = SupportSet::new(vec![44, 45]).unwrap();
        let radius = 2usize;
        let p = make_local_permutation(grid, &support, radius, &mut rng_from_seed(6));
        let perm = p.permutation().unwrap();
        for (dest, &source) in perm.iter().enumerate() {
            if dest == source {
                continue;
            }
            let near = support.indices().iter().any(|&s| {
                grid.sq_dist(dest, s) <= (radius * radius) as f64
            });
            assert!(near, "pixel {dest} moved outside the dilated support");
        }
    }

    #[test]
    fn measurement_row_count_follows_the_rate() {
        let spec = SceneSpec::standard(Letter::E);
        let scene = make_scene(&spec, &mut rng_from_seed(8));
        let m = make_measurement(&scene, 0.7, NOISELESS_SNR_DB, &mut rng_from_seed(9)).unwrap();
        assert_eq!(m.a.rows(), 358);
        assert_eq!(m.y.len(), 358);
        assert!(m.noise.iter().all(|&v| v == 0.0));
        assert_eq!(m.y, m.a.apply(scene.values()));
    }

    #[test]
    fn measurement_noise_hits_the_requested_snr() {
        let spec = SceneSpec::standard(Letter::T);
        let scene = make_scene(&spec, &mut rng_from_seed(10));
        let m = make_measurement(&scene, 0.5, 20.0, &mut rng_from_seed(11)).unwrap();
        let clean = m.a.apply(scene.values());
        assert!((realized_snr_db(&clean, &m.noise) - 20.0).abs() <= 1e-10);
    }

    #[test]
    fn degenerate_rates_are_rejected() {
        let grid = Grid::new(12, 8).unwrap();
        let spec = SceneSpec::new(Letter::T, grid, 1.0).unwrap();
        let scene = make_scene(&spec, &mut rng_from_seed(12));
        let err = make_measurement(&scene, 0.001, 20.0, &mut rng_from_seed(13)).unwrap_err();
        assert!(matches!(err, Error::ZeroRows { .. }));
        let err = make_measurement(&scene, 1.5, 20.0, &mut rng_from_seed(14)).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
    }

    #[test]
    fn trivial_perturbations_leave_the_scene_unchanged() {
        let grid = Grid::new(12, 8).unwrap();
        let scene = SceneSpec::new(Letter::T, grid, 1.0).unwrap();
        let instance =
            build_instance(&scene, &PerturbSpec::new(0, 0), 2, 0.8, 20.0, 42).unwrap();
        instance.validate().unwrap();
        for x_i in &instance.x_i_true {
            assert_eq!(x_i, &instance.x_true);
        }
        for (view, noise) in instance.views.iter().zip(&instance.noise) {
            let clean = view.a().apply(instance.x_true.values());
            let rebuilt = &clean + noise;
            for (r, y) in rebuilt.iter().zip(view.y()) {
                assert_eq!(r.to_bits(), y.to_bits());
            }
            assert!((realized_snr_db(&clean, noise) - 20.0).abs() <= 1e-10);
        }
    }

    #[test]
    fn instances_reproduce_bit_for_bit_from_the_seed() {
        let grid = Grid::new(16, 12).unwrap();
        let scene = SceneSpec::new(Letter::E, grid, 1.0).unwrap();
        let perturb = PerturbSpec::new(2, 1);
        let a = build_instance(&scene, &perturb, 2, 0.9, 25.0, 7).unwrap();
        let b = build_instance(&scene, &perturb, 2, 0.9, 25.0, 7).unwrap();
        assert_eq!(a, b);
        let c = build_instance(&scene, &perturb, 2, 0.9, 25.0, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn instance_files_round_trip() {
        let grid = Grid::new(12, 8).unwrap();
        let scene = SceneSpec::new(Letter::T, grid, 1.0).unwrap();
        let instance = build_instance(
            &scene,
            &PerturbSpec::new(1, 1),
            2,
            0.8,
            NOISELESS_SNR_DB,
            99,
        )
        .unwrap();
        let path = temp_path("roundtrip");
        instance.save(&path).unwrap();
        let loaded = Instance::load(&path).unwrap();
        std::fs::remove_file(&path).ok();
        assert_eq!(instance, loaded);
        assert_eq!(loaded.metadata.snr_db, NOISELESS_SNR_DB);
    }

    #[test]
    fn foreign_schema_tags_are_rejected() {
        let grid = Grid::new(12, 8).unwrap();
        let scene = SceneSpec::new(Letter::T, grid, 1.0).unwrap();
        let mut instance =
            build_instance(&scene, &PerturbSpec::new(1, 1), 1, 0.8, 20.0, 5).unwrap();
        instance.schema = "mvot-instance-v0".to_string();
        let path = temp_path("schema");
        instance.save(&path).unwrap();
        let err = Instance::load(&path).unwrap_err();
        std::fs::remove_file(&path).ok();
        assert!(matches!(err, Error::InvalidConfig(_)));
    }

    #[test]
    fn scrambled_views_still_validate() {
        // Room around the letter keeps collision-free shift patterns common;
        // on an exact-fit grid a shift range of 2 exhausts the retry budget.
        let grid = Grid::new(16, 12).unwrap();
        let scene = SceneSpec::new(Letter::E, grid, 1.0).unwrap();
        let instance =
            build_instance(&scene, &PerturbSpec::new(3, 2), 3, 0.6, 15.0, 123).unwrap();
        instance.validate().unwrap();
        assert_eq!(instance.views.len(), 3);
        // The hidden scramble moved something in at least one view.
        assert!(instance
            .x_i_true
            .iter()
            .any(|x_i| x_i != &instance.x_true));
    }
}
