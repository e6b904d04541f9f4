//! Storage layouts: which servers hold an object's systematic copy and which
//! server sets form its recovery groups.
//!
//! Layouts carry server indices only. Field arithmetic never enters the
//! latency model, so none is implemented.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};

/// `(n, k, r, t)` of an availability code, plus an optional minimum distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeParams {
    pub n: usize,
    pub k: usize,
    pub r: usize,
    pub t: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_distance: Option<usize>,
}

impl CodeParams {
    pub fn new(n: usize, k: usize, r: usize, t: usize) -> Result<Self> {
        let p = CodeParams {
            n,
            k,
            r,
            t,
            min_distance: None,
        };
        p.check()?;
        Ok(p)
    }

    pub fn with_min_distance(mut self, d: usize) -> Self {
        self.min_distance = Some(d);
        self
    }

    fn check(&self) -> Result<()> {
        if self.k < 1 || self.n < self.k {
            return Err(Error::invalid(format!(
                "need n >= k >= 1, got n={} k={}",
                self.n, self.k
            )));
        }
        if self.r < 1 {
            return Err(Error::invalid("locality r must be >= 1"));
        }
        if 1 + self.t * self.r > self.n {
            return Err(Error::invalid(format!(
                "1 + t*r = {} exceeds n = {}",
                1 + self.t * self.r,
                self.n
            )));
        }
        Ok(())
    }
}

impl fmt::Display for CodeParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{},{})", self.n, self.k, self.r, self.t)
    }
}

/// The Azure-style LRC as parameterized in the comparison table: each data
/// object is rebuilt from the two other data objects of its local group and
/// the local parity.
pub const AZURE_LRC_R3: CodeParams = CodeParams {
    n: 10,
    k: 6,
    r: 3,
    t: 1,
    min_distance: Some(4),
};

/// The same system under the `(10,6,2,1)` label it is sometimes quoted with.
/// Kept alongside [`AZURE_LRC_R3`] so that both readings can be evaluated.
pub const AZURE_LRC_R2: CodeParams = CodeParams {
    n: 10,
    k: 6,
    r: 2,
    t: 1,
    min_distance: Some(4),
};

/// An `(n, k)` MDS code. Its access structure is "systematic server, or any
/// `k` of the other `n - 1`", which is not a recovery-group layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MdsCode {
    pub n: usize,
    pub k: usize,
}

impl MdsCode {
    pub fn new(n: usize, k: usize) -> Result<Self> {
        if k < 1 || n < k {
            return Err(Error::invalid(format!("MDS needs n >= k >= 1, got ({n},{k})")));
        }
        Ok(MdsCode { n, k })
    }

    pub fn min_distance(&self) -> usize {
        self.n - self.k + 1
    }
}

/// Placement of one object.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectPlacement {
    pub systematic: usize,
    pub groups: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StorageLayout {
    pub params: CodeParams,
    pub objects: Vec<ObjectPlacement>,
}

/// First invariant a layout breaks.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LayoutViolation {
    #[error("bad parameters: {0}")]
    Params(String),
    #[error("expected {expected} objects, found {found}")]
    ObjectCount { expected: usize, found: usize },
    #[error("object {object}: expected {expected} groups, found {found}")]
    GroupCount {
        object: usize,
        expected: usize,
        found: usize,
    },
    #[error("object {object} group {group}: group size {found}, expected {expected}")]
    GroupSize {
        object: usize,
        group: usize,
        expected: usize,
        found: usize,
    },
    #[error("object {object}: groups not disjoint (server {server} repeated)")]
    NotDisjoint { object: usize, server: usize },
    #[error("object {object}: group {group} contains the systematic server {server}")]
    ContainsSystematic { object: usize, group: usize, server: usize },
    #[error("object {object}: server index {server} out of range 0..{n}")]
    OutOfRange { object: usize, server: usize, n: usize },
}

impl StorageLayout {
    pub fn n(&self) -> usize {
        self.params.n
    }

    pub fn k(&self) -> usize {
        self.params.k
    }

    pub fn r(&self) -> usize {
        self.params.r
    }

    pub fn t(&self) -> usize {
        self.params.t
    }

    pub fn label(&self) -> String {
        self.params.to_string()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Config(format!("serializing layout: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Reads a layout file and validates it.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let layout: StorageLayout =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("parsing layout: {e}")))?;
        validate_layout(&layout)?;
        Ok(layout)
    }
}

/// Binary Simplex code of dimension `m`: servers are the nonzero vectors of
/// GF(2)^m (server index `v - 1` for the vector with integer value `v`),
/// object `i` sits on the unit vector `e_i`, and its recovery groups are the
/// pairs `{v, v ^ e_i}` covering every other server.
pub fn simplex_layout(m: u32) -> Result<StorageLayout> {
    if m < 1 {
        return Err(Error::invalid("simplex dimension m must be >= 1"));
    }
    if m > 20 {
        return Err(Error::invalid("simplex dimension m must be <= 20"));
    }
    let n = (1usize << m) - 1;
    let k = m as usize;
    let t = (1usize << (m - 1)) - 1;
    let objects = (0..k)
        .map(|i| {
            let e = 1usize << i;
            let mut groups = Vec::with_capacity(t);
            for v in 1..=n {
                let w = v ^ e;
                if v != e && v < w {
                    groups.push(vec![v - 1, w - 1]);
                }
            }
            ObjectPlacement {
                systematic: e - 1,
                groups,
            }
        })
        .collect();
    let params = CodeParams {
        n,
        k,
        r: 2,
        t,
        min_distance: Some(1usize << (m - 1)),
    };
    let layout = StorageLayout { params, objects };
    debug_assert!(validate_layout(&layout).is_ok());
    Ok(layout)
}

/// Places `b` after `a` on disjoint servers.
pub fn direct_sum(a: &StorageLayout, b: &StorageLayout) -> Result<StorageLayout> {
    if a.r() != b.r() || a.t() != b.t() {
        return Err(Error::invalid(format!(
            "direct sum needs equal (r,t), got ({},{}) and ({},{})",
            a.r(),
            a.t(),
            b.r(),
            b.t()
        )));
    }
    let shift = a.n();
    let mut objects = a.objects.clone();
    objects.extend(b.objects.iter().map(|o| ObjectPlacement {
        systematic: o.systematic + shift,
        groups: o.groups.iter().map(|g| g.iter().map(|s| s + shift).collect()).collect(),
    }));
    let min_distance = match (a.params.min_distance, b.params.min_distance) {
        (Some(x), Some(y)) => Some(x.min(y)),
        _ => None,
    };
    Ok(StorageLayout {
        params: CodeParams {
            n: a.n() + b.n(),
            k: a.k() + b.k(),
            r: a.r(),
            t: a.t(),
            min_distance,
        },
        objects,
    })
}

/// `t_rep` copies of each of `k` objects. Copy `j` of object `i` lives on
/// server `j * k + i`; copies beyond the first are recovery groups of size 1.
pub fn replication_layout(k: usize, t_rep: usize) -> Result<StorageLayout> {
    if k < 1 || t_rep < 1 {
        return Err(Error::invalid("replication needs k >= 1 and t_rep >= 1"));
    }
    let objects = (0..k)
        .map(|i| ObjectPlacement {
            systematic: i,
            groups: (1..t_rep).map(|j| vec![j * k + i]).collect(),
        })
        .collect();
    Ok(StorageLayout {
        params: CodeParams {
            n: k * t_rep,
            k,
            r: 1,
            t: t_rep - 1,
            min_distance: Some(t_rep),
        },
        objects,
    })
}

/// One object on server 0 with `t` recovery groups of `r` fresh servers each.
pub fn single_object_layout(r: usize, t: usize) -> Result<StorageLayout> {
    if r < 1 {
        return Err(Error::invalid("locality must be >= 1"));
    }
    let groups = (0..t).map(|g| (1 + g * r..1 + (g + 1) * r).collect()).collect();
    Ok(StorageLayout {
        params: CodeParams {
            n: 1 + r * t,
            k: 1,
            r,
            t,
            min_distance: Some(t + 1),
        },
        objects: vec![ObjectPlacement { systematic: 0, groups }],
    })
}

/// Product of two single-parity codes over an `a x a` grid of objects.
/// Object `(i, j)` sits on server `i * a + j`; row parities follow on
/// servers `a^2 .. a^2 + a`, column parities after them. Each object is
/// recovered from the rest of its row plus the row parity, or the rest of
/// its column plus the column parity, giving locality `a` and availability 2.
pub fn product_layout(a: usize) -> Result<StorageLayout> {
    if a < 2 {
        return Err(Error::invalid("product layout needs a >= 2"));
    }
    let k = a * a;
    let objects = (0..k)
        .map(|o| {
            let (i, j) = (o / a, o % a);
            let mut row: Vec<usize> = (0..a).filter(|&c| c != j).map(|c| i * a + c).collect();
            row.push(k + i);
            let mut col: Vec<usize> = (0..a).filter(|&r| r != i).map(|r| r * a + j).collect();
            col.push(k + a + j);
            ObjectPlacement {
                systematic: o,
                groups: vec![row, col],
            }
        })
        .collect();
    let layout = StorageLayout {
        params: CodeParams {
            n: k + 2 * a,
            k,
            r: a,
            t: 2,
            min_distance: Some(3),
        },
        objects,
    };
    debug_assert!(validate_layout(&layout).is_ok());
    Ok(layout)
}

/// `(10,6,3,1)` LRC: data servers 0..6 in local groups {0,1,2} and {3,4,5}
/// with local parities on servers 6 and 7, global parities on 8 and 9.
/// Object `i` is recovered from the rest of its local group plus its parity.
pub fn azure_lrc_layout() -> StorageLayout {
    let objects = (0..6)
        .map(|i| {
            let base = (i / 3) * 3;
            let parity = 6 + i / 3;
            let mut group: Vec<usize> = (base..base + 3).filter(|&s| s != i).collect();
            group.push(parity);
            ObjectPlacement {
                systematic: i,
                groups: vec![group],
            }
        })
        .collect();
    StorageLayout {
        params: AZURE_LRC_R3,
        objects,
    }
}

/// Returns the first violated layout invariant, if any.
pub fn validate_layout(layout: &StorageLayout) -> std::result::Result<(), LayoutViolation> {
    let p = &layout.params;
    p.check().map_err(|e| LayoutViolation::Params(e.to_string()))?;
    if layout.objects.len() != p.k {
        return Err(LayoutViolation::ObjectCount {
            expected: p.k,
            found: layout.objects.len(),
        });
    }
    for (object, o) in layout.objects.iter().enumerate() {
        if o.systematic >= p.n {
            return Err(LayoutViolation::OutOfRange {
                object,
                server: o.systematic,
                n: p.n,
            });
        }
        if o.groups.len() != p.t {
            return Err(LayoutViolation::GroupCount {
                object,
                expected: p.t,
                found: o.groups.len(),
            });
        }
        let mut seen = HashSet::new();
        for (group, g) in o.groups.iter().enumerate() {
            if g.len() != p.r {
                return Err(LayoutViolation::GroupSize {
                    object,
                    group,
                    expected: p.r,
                    found: g.len(),
                });
            }
            for &server in g {
                if server >= p.n {
                    return Err(LayoutViolation::OutOfRange { object, server, n: p.n });
                }
                if server == o.systematic {
                    return Err(LayoutViolation::ContainsSystematic { object, group, server });
                }
                if !seen.insert(server) {
                    return Err(LayoutViolation::NotDisjoint { object, server });
                }
            }
        }
    }
    Ok(())
}

/// Inverse code rate `n / k`.
pub fn storage_overhead(params: &CodeParams) -> Ratio<usize> {
    Ratio::new(params.n, params.k)
}

/// A code with minimum distance `d` survives any `d - 1` failures.
pub fn fault_tolerance(min_distance: usize) -> Result<usize> {
    if min_distance < 1 {
        return Err(Error::invalid("minimum distance must be >= 1"));
    }
    Ok(min_distance - 1)
}

/// Object request probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopularityVector {
    p: Vec<f64>,
}

impl PopularityVector {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::invalid("popularity vector is empty"));
        }
        if let Some(x) = p.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(Error::invalid(format!("popularity {x} outside [0,1]")));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("popularities sum to {sum}, not 1")));
        }
        Ok(PopularityVector { p })
    }

    pub fn uniform(k: usize) -> Self {
        PopularityVector {
            p: vec![1.0 / k as f64; k],
        }
    }

    /// The first `ceil(k * hot_fraction)` objects share `hot_mass` equally and
    /// the rest share the remainder equally.
    pub fn skewed(k: usize, hot_fraction: f64, hot_mass: f64) -> Result<Self> {
        let hot = ((k as f64 * hot_fraction).ceil() as usize).clamp(1, k);
        let cold = k - hot;
        if cold == 0 {
            return Ok(Self::uniform(k));
        }
        let mut p = vec![hot_mass / hot as f64; hot];
        p.extend(std::iter::repeat_n((1.0 - hot_mass) / cold as f64, cold));
        // Absorb rounding so the sum check is exact to 1e-12.
        let err: f64 = 1.0 - p.iter().sum::<f64>();
        p[0] += err;
        Self::new(p)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.p
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.p.iter().cloned().fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn simplex_three_matches_textbook_groups() {
        let l = simplex_layout(3).unwrap();
        assert_eq!((l.n(), l.k(), l.r(), l.t()), (7, 3, 2, 3));
        // f1=1, f2=2, f1+f2=3, f3=4, f1+f3=5, f2+f3=6, f1+f2+f3=7; index = v - 1
        let f1 = &l.objects[0];
        assert_eq!(f1.systematic, 0);
        assert_eq!(f1.groups, vec![vec![1, 2], vec![3, 4], vec![5, 6]]);
        assert_eq!(validate_layout(&l), Ok(()));
    }

    #[test]
    fn simplex_small_dimensions() {
        let l1 = simplex_layout(1).unwrap();
        assert_eq!((l1.n(), l1.k(), l1.t()), (1, 1, 0));
        assert!(l1.objects[0].groups.is_empty());

        let l2 = simplex_layout(2).unwrap();
        assert_eq!((l2.n(), l2.k(), l2.t()), (3, 2, 1));
        // a = server 0, b = server 1, a+b = server 2
        assert_eq!(l2.objects[0].groups, vec![vec![1, 2]]);
        assert_eq!(l2.objects[1].groups, vec![vec![0, 2]]);
        assert!(simplex_layout(0).is_err());
    }

    #[test]
    fn simplex_groups_partition_the_other_servers() {
        for m in 1..=6 {
            let l = simplex_layout(m).unwrap();
            for o in &l.objects {
                let mut all: Vec<usize> = o.groups.iter().flatten().cloned().collect();
                all.push(o.systematic);
                all.sort_unstable();
                assert_eq!(all, (0..l.n()).collect::<Vec<_>>());
            }
        }
    }

    #[test]
    fn direct_sums() {
        let s3 = simplex_layout(3).unwrap();
        let d = direct_sum(&s3, &s3).unwrap();
        assert_eq!((d.n(), d.k(), d.r(), d.t()), (14, 6, 2, 3));
        assert_eq!(d.objects[3].systematic, 7);
        assert_eq!(validate_layout(&d), Ok(()));

        let s1 = simplex_layout(1).unwrap();
        let d1 = direct_sum(&s1, &s1).unwrap();
        assert_eq!((d1.n(), d1.k(), d1.t()), (2, 2, 0));

        let s2 = simplex_layout(2).unwrap();
        let d2 = direct_sum(&s2, &s2).unwrap();
        assert_eq!((d2.n(), d2.k(), d2.r(), d2.t()), (6, 4, 2, 1));
        assert_eq!(d2.objects[2].groups, vec![vec![4, 5]]);

        assert!(direct_sum(&s2, &s3).is_err());
    }

    #[test]
    fn replication() {
        let l = replication_layout(6, 3).unwrap();
        assert_eq!((l.n(), l.r(), l.t()), (18, 1, 2));
        assert_eq!(validate_layout(&l), Ok(()));
        let l = replication_layout(1, 1).unwrap();
        assert_eq!((l.n(), l.t()), (1, 0));
        let l = replication_layout(2, 2).unwrap();
        assert_eq!(l.n(), 4);
        assert_eq!(l.objects[1].systematic, 1);
        assert_eq!(l.objects[1].groups, vec![vec![3]]);
        assert!(replication_layout(0, 2).is_err());
    }

    #[test]
    fn azure_layout_is_valid() {
        let l = azure_lrc_layout();
        assert_eq!(validate_layout(&l), Ok(()));
        assert_eq!(l.objects[4].groups, vec![vec![3, 5, 7]]);
    }

    #[test]
    fn violations_are_reported() {
        let mut l = simplex_layout(3).unwrap();
        l.objects[0].groups[1] = vec![1, 4];
        let v = validate_layout(&l).unwrap_err();
        assert!(v.to_string().contains("groups not disjoint"), "{v}");

        let mut l = simplex_layout(3).unwrap();
        l.objects[2].groups[0].pop();
        let v = validate_layout(&l).unwrap_err();
        assert!(v.to_string().contains("group size"), "{v}");

        let mut l = simplex_layout(3).unwrap();
        l.objects[0].groups[0][0] = 0;
        assert!(matches!(
            validate_layout(&l),
            Err(LayoutViolation::ContainsSystematic { .. })
        ));
    }

    #[test]
    fn overhead_and_tolerance() {
        let p = CodeParams::new(14, 6, 2, 3).unwrap();
        let o = storage_overhead(&p);
        assert_eq!(o, Ratio::new(7, 3));
        assert!((*o.numer() as f64 / *o.denom() as f64 - 2.33).abs() < 0.005);
        let mds = CodeParams {
            n: 9,
            k: 6,
            r: 1,
            t: 0,
            min_distance: None,
        };
        assert_eq!(storage_overhead(&mds), Ratio::new(3, 2));
        let kk = CodeParams::new(5, 5, 1, 0).unwrap();
        assert_eq!(storage_overhead(&kk), Ratio::from_integer(1));

        assert_eq!(fault_tolerance(4).unwrap(), 3);
        assert_eq!(fault_tolerance(3).unwrap(), 2);
        assert_eq!(fault_tolerance(1).unwrap(), 0);
        assert!(fault_tolerance(0).is_err());
        assert_eq!(simplex_layout(3).unwrap().params.min_distance, Some(4));
    }

    #[test]
    fn params_checks() {
        assert!(CodeParams::new(3, 4, 1, 0).is_err());
        assert!(CodeParams::new(6, 3, 2, 3).is_err());
        assert!(CodeParams::new(7, 3, 2, 3).is_ok());
    }

    #[test]
    fn layout_file_round_trip() {
        let l = direct_sum(&simplex_layout(3).unwrap(), &simplex_layout(3).unwrap()).unwrap();
        let dir = std::env::temp_dir().join(format!("fjlab-layout-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("l.json");
        l.save(&path).unwrap();
        assert_eq!(StorageLayout::load(&path).unwrap(), l);

        let mut bad = l.clone();
        bad.objects[0].groups[0][1] = 99;
        let text = serde_json::to_string(&bad).unwrap();
        assert!(StorageLayout::from_json(&text).is_err());
    }

    #[test]
    fn popularity() {
        assert!(PopularityVector::new(vec![0.5, 0.4]).is_err());
        assert!(PopularityVector::new(vec![1.2, -0.2]).is_err());
        let s = PopularityVector::skewed(6, 1.0 / 3.0, 0.9).unwrap();
        assert!((s.as_slice()[0] - 0.45).abs() < 1e-12);
        assert!((s.as_slice()[5] - 0.025).abs() < 1e-12);
        assert!((s.max() - 0.45).abs() < 1e-12);
    }

    #[test]
    fn product_grid() {
        let l = product_layout(3).unwrap();
        assert_eq!((l.n(), l.k(), l.r(), l.t()), (15, 9, 3, 2));
        assert!(validate_layout(&l).is_ok());
        assert_eq!(l.objects[4].groups, vec![vec![3, 5, 10], vec![1, 7, 13]]);
        assert!(product_layout(1).is_err());
        let l = single_object_layout(3, 2).unwrap();
        assert_eq!(l.objects[0].groups, vec![vec![1, 2, 3], vec![4, 5, 6]]);
        assert!(validate_layout(&l).is_ok());
    }

    proptest! {
        #[test]
        fn direct_sum_preserves_validity_and_overhead(m in 1u32..6) {
            let a = simplex_layout(m).unwrap();
            let d = direct_sum(&a, &a).unwrap();
            prop_assert_eq!(validate_layout(&d), Ok(()));
            prop_assert_eq!(storage_overhead(&d.params), storage_overhead(&a.params));
        }
    }
}
