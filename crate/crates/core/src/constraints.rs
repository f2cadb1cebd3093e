//! Topological interaction constraints and their reduction to forbidden
//! label-pair tasks.
//!
//! A containment "β contains α" forbids α from touching any class other than
//! α and β (background included). An exclusion "α ⟂ γ" forbids α from touching
//! γ. Either may be widened to a gap of `d` sites, which swaps the named
//! neighborhood for a `(2d+1)`-wide all-ones box.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Named neighborhood definition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Connectivity {
    /// 2D face neighbors.
    Four,
    /// 2D face, edge and corner neighbors.
    Eight,
    /// 3D face neighbors.
    Six,
    /// 3D full 3×3×3 neighborhood.
    TwentySix,
    /// `(2d+1)^ndim` all-ones patch, any dimensionality.
    Box,
}

impl Connectivity {
    /// Face connectivity for the given dimensionality (4 in 2D, 6 in 3D).
    pub fn face(ndim: usize) -> Self {
        if ndim == 3 {
            Self::Six
        } else {
            Self::Four
        }
    }

    pub fn supports(self, ndim: usize) -> bool {
        match self {
            Self::Four | Self::Eight => ndim == 2,
            Self::Six | Self::TwentySix => ndim == 3,
            Self::Box => ndim == 2 || ndim == 3,
        }
    }

    fn check(self, ndim: usize) -> Result<()> {
        if self.supports(ndim) {
            Ok(())
        } else {
            Err(Error::Connectivity {
                conn: self.to_string(),
                ndim,
            })
        }
    }
}

impl fmt::Display for Connectivity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Four => "4",
            Self::Eight => "8",
            Self::Six => "6",
            Self::TwentySix => "26",
            Self::Box => "box",
        })
    }
}

impl FromStr for Connectivity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "4" => Ok(Self::Four),
            "8" => Ok(Self::Eight),
            "6" => Ok(Self::Six),
            "26" => Ok(Self::TwentySix),
            "box" => Ok(Self::Box),
            other => Err(Error::Constraint(format!(
                "unknown connectivity {other:?} (expected 4, 8, 6, 26 or box)"
            ))),
        }
    }
}

/// 0/1 stencil of extent `2·radius + 1` per axis, reflection-symmetric.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConnectivityKernel {
    ndim: usize,
    radius: usize,
    weights: Vec<u8>,
}

impl ConnectivityKernel {
    /// Validates a raw stencil: odd extent per axis, 0/1 entries, at least one
    /// off-center entry, symmetric under coordinate negation.
    pub fn from_weights(ndim: usize, radius: usize, weights: Vec<u8>) -> Result<Self> {
        if !(2..=3).contains(&ndim) || radius == 0 {
            return Err(Error::Constraint(format!(
                "kernel needs ndim 2 or 3 and radius >= 1, got {ndim}, {radius}"
            )));
        }
        let k = 2 * radius + 1;
        if weights.len() != k.pow(ndim as u32) {
            return Err(Error::Constraint(format!(
                "kernel of extent {k} in {ndim}D needs {} weights, got {}",
                k.pow(ndim as u32),
                weights.len()
            )));
        }
        if weights.iter().any(|&w| w > 1) {
            return Err(Error::Constraint("kernel weights must be 0 or 1".into()));
        }
        let kernel = Self {
            ndim,
            radius,
            weights,
        };
        if kernel.offsets().is_empty() {
            return Err(Error::Constraint("kernel has no off-center entry".into()));
        }
        let center = kernel.weights.len() / 2;
        for (i, &w) in kernel.weights.iter().enumerate() {
            if kernel.weights[2 * center - i] != w {
                return Err(Error::Constraint(
                    "kernel is not reflection-symmetric".into(),
                ));
            }
        }
        Ok(kernel)
    }

    pub fn ndim(&self) -> usize {
        self.ndim
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    /// Extent `k = 2d + 1` along each axis.
    pub fn extent(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn weights(&self) -> &[u8] {
        &self.weights
    }

    pub fn popcount(&self) -> u32 {
        self.weights.iter().map(|&w| u32::from(w)).sum()
    }

    pub fn center_weight(&self) -> u8 {
        self.weights[self.weights.len() / 2]
    }

    /// Same stencil with the center entry replaced.
    pub fn with_center(&self, weight: bool) -> Self {
        let mut out = self.clone();
        let c = out.weights.len() / 2;
        out.weights[c] = u8::from(weight);
        out
    }

    /// All set entries as padded `[dz, dy, dx]` offsets, center included
    /// when set.
    pub fn support(&self) -> Vec<[isize; 3]> {
        let k = self.extent();
        let r = self.radius as isize;
        let zs = if self.ndim == 3 { k } else { 1 };
        let mut out = Vec::new();
        let mut i = 0;
        for z in 0..zs {
            for y in 0..k {
                for x in 0..k {
                    if self.weights[i] == 1 {
                        let dz = if self.ndim == 3 { z as isize - r } else { 0 };
                        out.push([dz, y as isize - r, x as isize - r]);
                    }
                    i += 1;
                }
            }
        }
        out
    }

    /// Set entries other than the center.
    pub fn offsets(&self) -> Vec<[isize; 3]> {
        self.support()
            .into_iter()
            .filter(|o| *o != [0, 0, 0])
            .collect()
    }
}

/// Builds the stencil for a named connectivity (`d` must be 1) or a box of
/// radius `d`.
pub fn build_kernel(ndim: usize, conn: Connectivity, d: usize) -> Result<ConnectivityKernel> {
    conn.check(ndim)?;
    if d == 0 {
        return Err(Error::Constraint("kernel width d must be >= 1".into()));
    }
    if conn != Connectivity::Box && d != 1 {
        return Err(Error::Constraint(format!(
            "connectivity {conn} is defined for d = 1 only, got d = {d}"
        )));
    }
    let k = 2 * d + 1;
    let len = k.pow(ndim as u32);
    let weights = match conn {
        Connectivity::Box | Connectivity::Eight | Connectivity::TwentySix => vec![1; len],
        Connectivity::Four | Connectivity::Six => {
            // Plus-shaped: center and the 2·ndim face neighbors.
            let mut w = vec![0; len];
            let center = len / 2;
            w[center] = 1;
            let mut stride = 1;
            for _ in 0..ndim {
                w[center - stride] = 1;
                w[center + stride] = 1;
                stride *= k;
            }
            w
        }
    };
    ConnectivityKernel::from_weights(ndim, d, weights)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Constraint {
    /// `outer` surrounds `inner`.
    Containment { inner: u8, outer: u8, width: usize },
    /// `first` and `second` never come within `width` sites of each other.
    Exclusion { first: u8, second: u8, width: usize },
}

impl Constraint {
    pub fn contain(inner: u8, outer: u8) -> Self {
        Self::Containment {
            inner,
            outer,
            width: 1,
        }
    }

    pub fn exclude(first: u8, second: u8) -> Self {
        Self::Exclusion {
            first,
            second,
            width: 1,
        }
    }

    pub fn with_width(self, d: usize) -> Self {
        match self {
            Self::Containment { inner, outer, .. } => Self::Containment {
                inner,
                outer,
                width: d,
            },
            Self::Exclusion { first, second, .. } => Self::Exclusion {
                first,
                second,
                width: d,
            },
        }
    }

    pub fn width(&self) -> usize {
        match *self {
            Self::Containment { width, .. } | Self::Exclusion { width, .. } => width,
        }
    }

    fn ids(&self) -> [u8; 2] {
        match *self {
            Self::Containment { inner, outer, .. } => [inner, outer],
            Self::Exclusion { first, second, .. } => [first, second],
        }
    }
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Self::Containment { inner, outer, .. } => write!(f, "contain {inner} in {outer}")?,
            Self::Exclusion { first, second, .. } => write!(f, "exclude {first} {second}")?,
        }
        if self.width() != 1 {
            write!(f, " d={}", self.width())?;
        }
        Ok(())
    }
}

fn unordered(a: u8, b: u8) -> (u8, u8) {
    (a.min(b), a.max(b))
}

/// Validated list of constraints over `num_classes` labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConstraintSet {
    num_classes: u16,
    constraints: Vec<Constraint>,
}

impl ConstraintSet {
    /// Checks ids (distinct, `< num_classes`), widths (`>= 1`) and pairwise
    /// consistency: no class pair may be both allowed to touch (the two
    /// classes of a containment) and forbidden from touching (by an
    /// exclusion, or by another containment's complement set).
    pub fn new(num_classes: u16, constraints: Vec<Constraint>) -> Result<Self> {
        if !(1..=256).contains(&num_classes) {
            return Err(Error::Constraint(format!(
                "num_classes must be in 1..=256, got {num_classes}"
            )));
        }
        for c in &constraints {
            let [a, b] = c.ids();
            if a == b {
                return Err(Error::Constraint(format!("{c}: class ids must differ")));
            }
            if let Some(bad) = [a, b].into_iter().find(|&id| u16::from(id) >= num_classes) {
                return Err(Error::Constraint(format!(
                    "{c}: class {bad} >= num_classes {num_classes}"
                )));
            }
            if c.width() == 0 {
                return Err(Error::Constraint(format!("{c}: width must be >= 1")));
            }
        }

        let mut allowed = BTreeSet::new();
        for c in &constraints {
            if let Constraint::Containment { inner, outer, .. } = *c {
                allowed.insert(unordered(inner, outer));
            }
        }
        for c in &constraints {
            let clash = match *c {
                Constraint::Exclusion { first, second, .. } => allowed
                    .contains(&unordered(first, second))
                    .then_some(second),
                Constraint::Containment { inner, outer, .. } => (0..num_classes)
                    .map(|id| id as u8)
                    .filter(|&id| id != inner && id != outer)
                    .find(|&id| allowed.contains(&unordered(inner, id))),
            };
            if let Some(other) = clash {
                let [a, _] = c.ids();
                return Err(Error::Constraint(format!(
                    "contradictory constraints: {c} forbids classes {a} and {other} from touching, \
                     but a containment requires them to touch"
                )));
            }
        }
        Ok(Self {
            num_classes,
            constraints,
        })
    }

    pub fn empty(num_classes: u16) -> Self {
        Self {
            num_classes,
            constraints: Vec::new(),
        }
    }

    pub fn num_classes(&self) -> u16 {
        self.num_classes
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }
}

/// One forbidden label pair: no site with a label in `ids_a` may have a
/// site with a label in `ids_c` in its kernel neighborhood.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairTask {
    pub ids_a: Vec<u8>,
    pub ids_c: Vec<u8>,
    pub width: usize,
    pub kernel: ConnectivityKernel,
}

impl PairTask {
    pub fn new(ids_a: Vec<u8>, ids_c: Vec<u8>, kernel: ConnectivityKernel) -> Result<Self> {
        if ids_a.is_empty() || ids_c.is_empty() {
            return Err(Error::Constraint("task id sets must be non-empty".into()));
        }
        if ids_a.iter().any(|a| ids_c.contains(a)) {
            return Err(Error::Constraint(format!(
                "task id sets overlap: {ids_a:?} / {ids_c:?}"
            )));
        }
        Ok(Self {
            ids_a,
            ids_c,
            width: kernel.radius(),
            kernel,
        })
    }

    /// Lookup table marking the labels of `ids_a`.
    pub fn table_a(&self) -> [bool; 256] {
        membership(&self.ids_a)
    }

    pub fn table_c(&self) -> [bool; 256] {
        membership(&self.ids_c)
    }
}

fn membership(ids: &[u8]) -> [bool; 256] {
    let mut t = [false; 256];
    for &id in ids {
        t[usize::from(id)] = true;
    }
    t
}

/// Reduces each constraint to a [`PairTask`]. Width-1 constraints use `conn`;
/// wider ones use the box kernel of that radius.
pub fn reduce(cs: &ConstraintSet, conn: Connectivity, ndim: usize) -> Result<Vec<PairTask>> {
    conn.check(ndim)?;
    cs.constraints
        .iter()
        .map(|c| {
            let d = c.width();
            let kernel = if d == 1 {
                build_kernel(ndim, conn, 1)?
            } else {
                build_kernel(ndim, Connectivity::Box, d)?
            };
            let (ids_a, ids_c) = match *c {
                Constraint::Containment { inner, outer, .. } => {
                    let rest = (0..cs.num_classes)
                        .map(|id| id as u8)
                        .filter(|&id| id != inner && id != outer)
                        .collect::<Vec<_>>();
                    (vec![inner], rest)
                }
                Constraint::Exclusion { first, second, .. } => (vec![first], vec![second]),
            };
            if ids_c.is_empty() {
                // Two-class containment: nothing is forbidden, but an empty
                // set cannot form a task.
                return Ok(None);
            }
            PairTask::new(ids_a, ids_c, kernel).map(Some)
        })
        .filter_map(Result::transpose)
        .collect()
}

/// Parsed constraint config file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConstraintConfig {
    pub set: ConstraintSet,
    pub conn: Option<Connectivity>,
}

impl ConstraintConfig {
    /// Connectivity to use on a grid of `ndim` dimensions: the configured one,
    /// or face connectivity.
    pub fn connectivity(&self, ndim: usize) -> Connectivity {
        self.conn.unwrap_or_else(|| Connectivity::face(ndim))
    }
}

fn parse_width(tok: &str, line: usize) -> Result<usize> {
    let bad = || Error::Config {
        line,
        msg: format!("expected d=<n> with n >= 1, got {tok:?}"),
    };
    let n: usize = tok
        .strip_prefix("d=")
        .ok_or_else(bad)?
        .parse()
        .map_err(|_| bad())?;
    if n == 0 {
        return Err(bad());
    }
    Ok(n)
}

fn parse_id(tok: &str, line: usize) -> Result<u8> {
    tok.parse().map_err(|_| Error::Config {
        line,
        msg: format!("expected class id 0..=255, got {tok:?}"),
    })
}

/// Parses the line-oriented config:
///
/// ```text
/// classes <c>
/// contain <alpha> in <beta> [d=<n>]
/// exclude <alpha> <gamma> [d=<n>]
/// conn <4|8|6|26|box>
/// # comment
/// ```
pub fn parse_config(text: &str) -> Result<ConstraintConfig> {
    let mut classes: Option<(u16, usize)> = None;
    let mut conn = None;
    let mut constraints = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let toks: Vec<&str> = content.split_whitespace().collect();
        let err = |msg: String| Error::Config { line, msg };
        match toks.as_slice() {
            ["classes", n] => {
                if classes.is_some() {
                    return Err(err("duplicate classes directive".into()));
                }
                let c: u16 = n
                    .parse()
                    .ok()
                    .filter(|c| (1..=256).contains(c))
                    .ok_or_else(|| err(format!("class count must be 1..=256, got {n:?}")))?;
                classes = Some((c, line));
            }
            ["conn", name] => {
                if conn.is_some() {
                    return Err(err("duplicate conn directive".into()));
                }
                conn = Some(
                    name.parse::<Connectivity>()
                        .map_err(|e| err(e.to_string()))?,
                );
            }
            ["contain", a, "in", b, rest @ ..] if rest.len() <= 1 => {
                let d = rest
                    .first()
                    .map(|t| parse_width(t, line))
                    .transpose()?
                    .unwrap_or(1);
                constraints.push((
                    line,
                    Constraint::contain(parse_id(a, line)?, parse_id(b, line)?).with_width(d),
                ));
            }
            ["exclude", a, b, rest @ ..] if rest.len() <= 1 => {
                let d = rest
                    .first()
                    .map(|t| parse_width(t, line))
                    .transpose()?
                    .unwrap_or(1);
                constraints.push((
                    line,
                    Constraint::exclude(parse_id(a, line)?, parse_id(b, line)?).with_width(d),
                ));
            }
            [directive, ..] => {
                return Err(err(format!("unknown or malformed directive {directive:?}")))
            }
            [] => unreachable!(),
        }
    }

    let (num_classes, _) = classes.ok_or(Error::Config {
        line: 0,
        msg: "missing `classes <c>` directive".into(),
    })?;
    // Validate one at a time first so errors carry the offending line.
    for &(line, c) in &constraints {
        ConstraintSet::new(num_classes, vec![c]).map_err(|e| Error::Config {
            line,
            msg: e.to_string(),
        })?;
    }
    let set = ConstraintSet::new(
        num_classes,
        constraints.into_iter().map(|(_, c)| c).collect(),
    )
    .map_err(|e| Error::Config {
        line: 0,
        msg: e.to_string(),
    })?;
    Ok(ConstraintConfig { set, conn })
}

/// Renders a config that [`parse_config`] reads back unchanged.
pub fn format_config(cfg: &ConstraintConfig) -> String {
    let mut out = format!("classes {}\n", cfg.set.num_classes());
    if let Some(conn) = cfg.conn {
        out.push_str(&format!("conn {conn}\n"));
    }
    for c in cfg.set.constraints() {
        out.push_str(&format!("{c}\n"));
    }
    out
}
