//! Item universe, dissimilarity metric and similarity neighbourhoods.
//!
//! Items are identified by dense indices `0..N`. Every item carries an
//! embedding of a common dimension and a request rate; rates are normalized
//! to sum to one, so the unit of time is the mean interarrival time of the
//! aggregate request process.
//!
//! A [`NeighborIndex`] stores, for every item `n`, the items within the
//! similarity threshold `d` in a strict total order: ascending distance, then
//! a tie rank (counterclockwise angle on 2-D catalogs, item id otherwise).
//! The item itself always comes first at distance zero.

use std::cmp::Ordering;
use std::f64::consts::TAU;
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Shape of a full integer grid catalog, `id = y * width + x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridShape {
    pub width: usize,
    pub height: usize,
}

impl GridShape {
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn id(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn position(&self, id: usize) -> (usize, usize) {
        (id % self.width, id / self.width)
    }
}

/// Borrowed view of one catalog entry.
#[derive(Debug, Clone, Copy)]
pub struct Item<'a> {
    pub id: usize,
    pub embedding: &'a [f64],
    pub grid_position: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    dim: usize,
    coords: Vec<f64>,
    rates: Vec<f64>,
    grid: Option<GridShape>,
}

impl Catalog {
    /// Builds a catalog from per-item embeddings and nonnegative weights.
    /// Weights are normalized to rates summing to one.
    pub fn new(embeddings: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        let Some(first) = embeddings.first() else {
            return Err(Error::EmptyCatalog);
        };
        let dim = first.len();
        if dim == 0 {
            return Err(Error::InvalidParameter(
                "embeddings must have at least one coordinate".into(),
            ));
        }
        if weights.len() != embeddings.len() {
            return Err(Error::InvalidParameter(format!(
                "{} embeddings but {} weights",
                embeddings.len(),
                weights.len()
            )));
        }
        let mut coords = Vec::with_capacity(dim * embeddings.len());
        for (item, e) in embeddings.iter().enumerate() {
            if e.len() != dim {
                return Err(Error::DimensionMismatch {
                    item,
                    expected: dim,
                    found: e.len(),
                });
            }
            if let Some(bad) = e.iter().find(|c| !c.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "item {item} has non-finite coordinate {bad}"
                )));
            }
            coords.extend_from_slice(e);
        }
        let rates = normalize_weights(&weights)?;
        let mut catalog = Catalog {
            dim,
            coords,
            rates,
            grid: None,
        };
        catalog.grid = catalog.detect_grid();
        Ok(catalog)
    }

    /// Full `width x height` integer grid with item `(x, y)` at id
    /// `y * width + x`.
    pub fn grid(width: usize, height: usize, weights: Vec<f64>) -> Result<Self> {
        let shape = GridShape { width, height };
        if shape.is_empty() {
            return Err(Error::EmptyCatalog);
        }
        if weights.len() != shape.len() {
            return Err(Error::InvalidParameter(format!(
                "{width}x{height} grid needs {} weights, got {}",
                shape.len(),
                weights.len()
            )));
        }
        let mut coords = Vec::with_capacity(2 * shape.len());
        for id in 0..shape.len() {
            let (x, y) = shape.position(id);
            coords.push(x as f64);
            coords.push(y as f64);
        }
        Ok(Catalog {
            dim: 2,
            coords,
            rates: normalize_weights(&weights)?,
            grid: Some(shape),
        })
    }

    pub fn len(&self) -> usize {
        self.rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rates.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn grid_shape(&self) -> Option<GridShape> {
        self.grid
    }

    /// Normalized request rates, one per item.
    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn embedding(&self, id: usize) -> &[f64] {
        &self.coords[id * self.dim..(id + 1) * self.dim]
    }

    pub fn item(&self, id: usize) -> Item<'_> {
        Item {
            id,
            embedding: self.embedding(id),
            grid_position: self.grid.map(|g| g.position(id)),
        }
    }

    pub fn items(&self) -> impl Iterator<Item = Item<'_>> + '_ {
        (0..self.len()).map(|id| self.item(id))
    }

    /// Euclidean dissimilarity between two items.
    pub fn dis(&self, a: usize, b: usize) -> f64 {
        self.embedding(a)
            .iter()
            .zip(self.embedding(b))
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }

    /// Same embeddings with a new rate vector (normalized here).
    pub fn with_weights(&self, weights: &[f64]) -> Result<Self> {
        if weights.len() != self.len() {
            return Err(Error::InvalidParameter(format!(
                "catalog has {} items but {} weights were given",
                self.len(),
                weights.len()
            )));
        }
        Ok(Catalog {
            rates: normalize_weights(weights)?,
            ..self.clone()
        })
    }

    fn detect_grid(&self) -> Option<GridShape> {
        if self.dim != 2 {
            return None;
        }
        let mut width = 0usize;
        let mut height = 0usize;
        for e in self.coords.chunks_exact(2) {
            for &c in e {
                if c < 0.0 || c.fract() != 0.0 || c > u32::MAX as f64 {
                    return None;
                }
            }
            width = width.max(e[0] as usize + 1);
            height = height.max(e[1] as usize + 1);
        }
        let shape = GridShape { width, height };
        if shape.len() != self.len() {
            return None;
        }
        let consistent = self
            .coords
            .chunks_exact(2)
            .enumerate()
            .all(|(id, e)| shape.id(e[0] as usize, e[1] as usize) == id);
        consistent.then_some(shape)
    }

    pub fn read_csv<R: Read>(reader: R, origin: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header = rdr.headers()?.clone();
        let cols: Vec<&str> = header.iter().collect();
        if cols.len() < 3 || cols[0] != "item_id" || cols[cols.len() - 1] != "weight" {
            return Err(Error::parse(
                origin,
                1,
                "expected header item_id,dim_0,...,dim_{D-1},weight",
            ));
        }
        let dim = cols.len() - 2;
        for (k, c) in cols[1..=dim].iter().enumerate() {
            if *c != format!("dim_{k}") {
                return Err(Error::parse(
                    origin,
                    1,
                    format!("expected dim_{k}, found {c}"),
                ));
            }
        }

        let mut rows: Vec<(usize, Vec<f64>, f64)> = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line());
            if record.len() != dim + 2 {
                return Err(Error::parse(
                    origin,
                    line,
                    format!("expected {} fields, found {}", dim + 2, record.len()),
                ));
            }
            let id: usize = record[0]
                .parse()
                .map_err(|_| Error::parse(origin, line, format!("bad item_id {:?}", &record[0])))?;
            let mut emb = Vec::with_capacity(dim);
            for k in 0..dim {
                let v: f64 = record[k + 1].parse().map_err(|_| {
                    Error::parse(origin, line, format!("bad coordinate {:?}", &record[k + 1]))
                })?;
                emb.push(v);
            }
            let w: f64 = record[dim + 1].parse().map_err(|_| {
                Error::parse(origin, line, format!("bad weight {:?}", &record[dim + 1]))
            })?;
            rows.push((id, emb, w));
        }

        let n = rows.len();
        let mut embeddings = vec![Vec::new(); n];
        let mut weights = vec![f64::NAN; n];
        let mut seen = vec![false; n];
        for (id, emb, w) in rows {
            if id >= n || seen[id] {
                return Err(Error::parse(
                    origin,
                    0,
                    format!("item ids must be a permutation of 0..{n}; offending id {id}"),
                ));
            }
            seen[id] = true;
            embeddings[id] = emb;
            weights[id] = w;
        }
        Catalog::new(embeddings, weights)
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)?;
        Catalog::read_csv(std::io::BufReader::new(file), &path.display().to_string())
    }

    /// Writes the catalog with the given per-item weights (typically the
    /// unnormalized popularity used to build it).
    pub fn write_csv<W: Write>(&self, mut out: W, weights: &[f64]) -> Result<()> {
        if weights.len() != self.len() {
            return Err(Error::InvalidParameter(
                "weight vector length mismatch".into(),
            ));
        }
        write!(out, "item_id")?;
        for k in 0..self.dim {
            write!(out, ",dim_{k}")?;
        }
        writeln!(out, ",weight")?;
        for (id, w) in weights.iter().enumerate() {
            write!(out, "{id}")?;
            for c in self.embedding(id) {
                write!(out, ",{c}")?;
            }
            writeln!(out, ",{w}")?;
        }
        Ok(())
    }
}

fn normalize_weights(weights: &[f64]) -> Result<Vec<f64>> {
    if weights.is_empty() {
        return Err(Error::EmptyCatalog);
    }
    for (item, &weight) in weights.iter().enumerate() {
        if !(weight >= 0.0 && weight.is_finite()) {
            return Err(Error::InvalidWeight { item, weight });
        }
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::ZeroMass);
    }
    Ok(weights.iter().map(|w| w / total).collect())
}

/// How entries at equal distance are ordered inside a neighbourhood.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TieBreak {
    /// Ascending item id.
    ItemId,
    /// Counterclockwise angle of the displacement `m - n`, starting at the
    /// positive x-axis, in `[0, 2pi)`. Requires 2-D embeddings.
    CounterClockwise,
}

impl TieBreak {
    /// Counterclockwise for grid catalogs, item id otherwise.
    pub fn default_for(catalog: &Catalog) -> Self {
        if catalog.grid_shape().is_some() {
            TieBreak::CounterClockwise
        } else {
            TieBreak::ItemId
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub item: usize,
    pub distance: f64,
}

/// Per-item ordered neighbourhoods `N[n]` in compressed row form.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborIndex {
    threshold: f64,
    tie_break: TieBreak,
    offsets: Vec<usize>,
    entries: Vec<Neighbor>,
    // reverse[offsets[n] + k] = position of n inside the list of entries[offsets[n] + k].item
    reverse: Vec<usize>,
}

#[derive(Clone, Copy)]
struct OrderKey {
    distance: f64,
    rank: f64,
    id: usize,
}

impl OrderKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.distance
            .total_cmp(&other.distance)
            .then(self.rank.total_cmp(&other.rank))
            .then(self.id.cmp(&other.id))
    }
}

fn order_key(catalog: &Catalog, tie_break: TieBreak, center: usize, m: usize) -> OrderKey {
    let distance = catalog.dis(center, m);
    let rank = match tie_break {
        TieBreak::ItemId => 0.0,
        TieBreak::CounterClockwise => {
            let (c, e) = (catalog.embedding(center), catalog.embedding(m));
            let angle = (e[1] - c[1]).atan2(e[0] - c[0]);
            if angle < 0.0 {
                angle + TAU
            } else {
                angle
            }
        }
    };
    OrderKey {
        distance,
        rank,
        id: m,
    }
}

impl NeighborIndex {
    /// Builds `N[n]` for every item by brute-force distance evaluation,
    /// restricted to a bounding window on grid catalogs.
    pub fn build(catalog: &Catalog, d: f64, tie_break: TieBreak) -> Result<Self> {
        if !d.is_finite() || d < 0.0 {
            return Err(Error::InvalidThreshold(d));
        }
        if catalog.is_empty() {
            return Err(Error::EmptyCatalog);
        }
        if tie_break == TieBreak::CounterClockwise && catalog.dim() != 2 {
            return Err(Error::InvalidParameter(format!(
                "counterclockwise tie-break needs 2-D embeddings, catalog has dimension {}",
                catalog.dim()
            )));
        }

        let n = catalog.len();
        let lists: Vec<Vec<Neighbor>> = (0..n)
            .into_par_iter()
            .map(|center| {
                let mut keys: Vec<OrderKey> = candidates(catalog, center, d)
                    .filter(|&m| m != center)
                    .map(|m| order_key(catalog, tie_break, center, m))
                    .filter(|k| k.distance <= d)
                    .collect();
                keys.sort_unstable_by(OrderKey::cmp);
                std::iter::once(Neighbor {
                    item: center,
                    distance: 0.0,
                })
                .chain(keys.into_iter().map(|k| Neighbor {
                    item: k.id,
                    distance: k.distance,
                }))
                .collect()
            })
            .collect();

        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for l in &lists {
            offsets.push(offsets.last().unwrap() + l.len());
        }
        let entries: Vec<Neighbor> = lists.into_iter().flatten().collect();

        let reverse: Vec<usize> = (0..n)
            .into_par_iter()
            .flat_map_iter(|center| {
                let row = &entries[offsets[center]..offsets[center + 1]];
                let (entries, offsets) = (&entries, &offsets);
                row.iter().map(move |nb| {
                    if nb.item == center {
                        return 0;
                    }
                    let other = &entries[offsets[nb.item]..offsets[nb.item + 1]];
                    let key = order_key(catalog, tie_break, nb.item, center);
                    other[1..]
                        .binary_search_by(|e| {
                            order_key(catalog, tie_break, nb.item, e.item).cmp(&key)
                        })
                        .map(|p| p + 1)
                        .expect("neighbourhood relation is symmetric")
                })
            })
            .collect();

        Ok(NeighborIndex {
            threshold: d,
            tie_break,
            offsets,
            entries,
            reverse,
        })
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn tie_break(&self) -> TieBreak {
        self.tie_break
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Total number of (item, neighbour) entries, self entries included.
    pub fn entry_count(&self) -> usize {
        self.entries.len()
    }

    /// `N[n]` in order; the first entry is `n` itself.
    pub fn neighbors(&self, n: usize) -> &[Neighbor] {
        &self.entries[self.offsets[n]..self.offsets[n + 1]]
    }

    /// For each entry of `neighbors(n)`, the position of `n` inside that
    /// neighbour's own list.
    pub fn reverse_positions(&self, n: usize) -> &[usize] {
        &self.reverse[self.offsets[n]..self.offsets[n + 1]]
    }

    pub fn position(&self, n: usize, i: usize) -> Option<usize> {
        self.neighbors(n).iter().position(|e| e.item == i)
    }

    /// Items of `N(n)` strictly before `i` in n's order (`N_i(n)`), or the
    /// closed variant that also contains `n` (`N_i[n]`). Both are empty for
    /// `i == n`.
    pub fn closer_set(&self, n: usize, i: usize, closed: bool) -> Result<Vec<usize>> {
        if n >= self.len() {
            return Err(Error::UnknownItem(n));
        }
        let pos = self
            .position(n, i)
            .ok_or(Error::NotANeighbor { center: n, item: i })?;
        let start = if closed { 0 } else { 1 };
        Ok(self.neighbors(n)[start.min(pos)..pos]
            .iter()
            .map(|e| e.item)
            .collect())
    }

    /// Whether any item has a neighbour other than itself.
    pub fn has_neighbors(&self) -> bool {
        self.entries.len() > self.len()
    }
}

fn candidates<'a>(
    catalog: &'a Catalog,
    center: usize,
    d: f64,
) -> Box<dyn Iterator<Item = usize> + 'a> {
    match catalog.grid_shape() {
        Some(g) => {
            let (x, y) = g.position(center);
            let r = d.floor().min(g.width.max(g.height) as f64) as usize;
            let (x0, x1) = (x.saturating_sub(r), (x + r).min(g.width - 1));
            let (y0, y1) = (y.saturating_sub(r), (y + r).min(g.height - 1));
            Box::new((y0..=y1).flat_map(move |yy| (x0..=x1).map(move |xx| g.id(xx, yy))))
        }
        None => Box::new(0..catalog.len()),
    }
}

/// Approximate-hit probability as a function of dissimilarity: a
/// nonincreasing step table, one at distance zero and zero beyond the
/// threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct QModel {
    threshold: f64,
    steps: Vec<(f64, f64)>,
}

const STEP_TOLERANCE: f64 = 1e-9;

impl QModel {
    /// SIM-LRU: every item within the threshold serves with probability one.
    pub fn sim_lru(d: f64) -> Self {
        QModel {
            threshold: d,
            steps: vec![(d, 1.0)],
        }
    }

    /// Exact-match only: zero for every positive distance.
    pub fn exact_only(d: f64) -> Self {
        QModel {
            threshold: d,
            steps: Vec::new(),
        }
    }

    /// Step table `[(distance_k, q_k)]`: `q(x) = q_k` for the first `k` with
    /// `x <= distance_k`, and zero past the last step or past `d`. Steps
    /// beyond `d` are dropped.
    pub fn step(d: f64, table: &[(f64, f64)]) -> Result<Self> {
        if !d.is_finite() || d < 0.0 {
            return Err(Error::InvalidThreshold(d));
        }
        let mut prev_dist = 0.0;
        let mut prev_q = 1.0;
        for &(dist, q) in table {
            if !dist.is_finite() || dist <= prev_dist {
                return Err(Error::InvalidParameter(format!(
                    "q-map distances must be positive and strictly increasing, got {dist}"
                )));
            }
            if !(0.0..=prev_q).contains(&q) {
                return Err(Error::InvalidParameter(format!(
                    "q-map probabilities must lie in [0, 1] and be nonincreasing, got {q}"
                )));
            }
            prev_dist = dist;
            prev_q = q;
        }
        let steps = table
            .iter()
            .copied()
            .filter(|&(dist, _)| dist <= d * (1.0 + STEP_TOLERANCE))
            .collect();
        Ok(QModel {
            threshold: d,
            steps,
        })
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn steps(&self) -> &[(f64, f64)] {
        &self.steps
    }

    pub fn prob(&self, distance: f64) -> f64 {
        if distance <= 0.0 {
            return 1.0;
        }
        if distance > self.threshold {
            return 0.0;
        }
        self.steps
            .iter()
            .find(|&&(dist, _)| distance <= dist * (1.0 + STEP_TOLERANCE))
            .map_or(0.0, |&(_, q)| q)
    }
}
