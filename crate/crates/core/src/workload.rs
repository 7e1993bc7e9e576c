//! Popularity profiles and IRM request streams.
//!
//! Streams are plain i.i.d. item sequences; Poisson timing is not modelled
//! because hit counts and request-epoch occupancies only depend on the order
//! of requests. Sampling is inverse-CDF by binary search over a cumulative
//! array, driven by ChaCha8 (`rand_chacha` 0.3) seeded with `seed_from_u64`,
//! one `f64` draw per request.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::catalog::{Catalog, GridShape};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum ProfileSource {
    SyntheticGrid {
        width: usize,
        height: usize,
        hotspots: Vec<(usize, usize)>,
        alpha: f64,
    },
    Trace {
        total_requests: u64,
    },
    Catalog,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PopularityProfile {
    probabilities: Vec<f64>,
    source: ProfileSource,
}

impl PopularityProfile {
    pub fn new(weights: &[f64], source: ProfileSource) -> Result<Self> {
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
        Ok(PopularityProfile {
            probabilities: weights.iter().map(|w| w / total).collect(),
            source,
        })
    }

    /// The rates a catalog already carries.
    pub fn from_catalog(catalog: &Catalog) -> Self {
        PopularityProfile {
            probabilities: catalog.rates().to_vec(),
            source: ProfileSource::Catalog,
        }
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn source(&self) -> &ProfileSource {
        &self.source
    }

    pub fn len(&self) -> usize {
        self.probabilities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probabilities.is_empty()
    }

    /// `item_id,probability`, one row per item.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "item_id,probability")?;
        for (id, p) in self.probabilities.iter().enumerate() {
            writeln!(out, "{id},{p}")?;
        }
        Ok(())
    }
}

/// Unnormalized two-hotspot grid weights,
/// `w(x, y) = (min_c dis((x, y), c) + 1)^-alpha`, in grid id order.
pub fn grid_weights(
    width: usize,
    height: usize,
    hotspots: &[(usize, usize)],
    alpha: f64,
) -> Result<Vec<f64>> {
    let shape = GridShape { width, height };
    if shape.is_empty() {
        return Err(Error::EmptyCatalog);
    }
    if !alpha.is_finite() || alpha <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    if hotspots.is_empty() {
        return Err(Error::InvalidParameter(
            "at least one hotspot is required".into(),
        ));
    }
    if let Some(&(x, y)) = hotspots.iter().find(|&&(x, y)| x >= width || y >= height) {
        return Err(Error::HotspotOutsideGrid {
            x,
            y,
            width,
            height,
        });
    }
    Ok((0..shape.len())
        .map(|id| {
            let (x, y) = shape.position(id);
            let nearest = hotspots
                .iter()
                .map(|&(cx, cy)| {
                    let (dx, dy) = (x as f64 - cx as f64, y as f64 - cy as f64);
                    (dx * dx + dy * dy).sqrt()
                })
                .fold(f64::INFINITY, f64::min);
            (nearest + 1.0).powf(-alpha)
        })
        .collect())
}

pub fn synth_grid_popularity(
    width: usize,
    height: usize,
    hotspots: &[(usize, usize)],
    alpha: f64,
) -> Result<PopularityProfile> {
    let weights = grid_weights(width, height, hotspots, alpha)?;
    PopularityProfile::new(
        &weights,
        ProfileSource::SyntheticGrid {
            width,
            height,
            hotspots: hotspots.to_vec(),
            alpha,
        },
    )
}

/// Empirical profile from per-item request counts; items without a count get
/// probability zero.
pub fn ingest_trace(catalog: &Catalog, counts: &BTreeMap<usize, u64>) -> Result<PopularityProfile> {
    let mut weights = vec![0.0; catalog.len()];
    let mut total = 0u64;
    for (&id, &count) in counts {
        if id >= catalog.len() {
            return Err(Error::UnknownItem(id));
        }
        weights[id] = count as f64;
        total += count;
    }
    if total == 0 {
        return Err(Error::ZeroMass);
    }
    PopularityProfile::new(
        &weights,
        ProfileSource::Trace {
            total_requests: total,
        },
    )
}

/// Reads a trace-count CSV `item_id,count`. Repeated ids accumulate.
pub fn read_trace_counts(path: impl AsRef<Path>) -> Result<BTreeMap<usize, u64>> {
    let path = path.as_ref();
    let origin = path.display().to_string();
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let header = rdr.headers()?.clone();
    if header.len() != 2 || &header[0] != "item_id" || &header[1] != "count" {
        return Err(Error::parse(&origin, 1, "expected header item_id,count"));
    }
    let mut counts = BTreeMap::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let id: usize = record[0]
            .parse()
            .map_err(|_| Error::parse(&origin, line, format!("bad item_id {:?}", &record[0])))?;
        let count: u64 = record[1]
            .parse()
            .map_err(|_| Error::parse(&origin, line, format!("bad count {:?}", &record[1])))?;
        *counts.entry(id).or_insert(0) += count;
    }
    Ok(counts)
}

#[derive(Clone)]
enum StreamSource {
    Sampled {
        cdf: Arc<[f64]>,
        last: usize,
        seed: u64,
    },
    Replay(Arc<[usize]>),
}

/// A finite request sequence: either `len` i.i.d. draws from a profile
/// under a seed, or a replayed list of item ids.
#[derive(Clone)]
pub struct RequestStream {
    source: StreamSource,
    len: usize,
}

impl fmt::Debug for RequestStream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = f.debug_struct("RequestStream");
        s.field("len", &self.len);
        if let StreamSource::Sampled { seed, .. } = &self.source {
            s.field("seed", seed);
        }
        s.finish()
    }
}

impl RequestStream {
    pub fn seed(&self) -> Option<u64> {
        match &self.source {
            StreamSource::Sampled { seed, .. } => Some(*seed),
            StreamSource::Replay(_) => None,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn replay(items: Vec<usize>) -> Self {
        let len = items.len();
        RequestStream {
            source: StreamSource::Replay(items.into()),
            len,
        }
    }

    /// Same profile, different seed.
    pub fn reseeded(&self, seed: u64) -> Self {
        let mut s = self.clone();
        if let StreamSource::Sampled { seed: old, .. } = &mut s.source {
            *old = seed;
        }
        s
    }

    pub fn iter(&self) -> RequestIter<'_> {
        match &self.source {
            StreamSource::Sampled { cdf, last, seed } => RequestIter::Sampled {
                cdf,
                last: *last,
                rng: ChaCha8Rng::seed_from_u64(*seed),
                remaining: self.len,
            },
            StreamSource::Replay(items) => RequestIter::Replay(items.iter()),
        }
    }

    pub fn to_vec(&self) -> Vec<usize> {
        self.iter().collect()
    }

    /// Reads a replay file: one item id per line, blank lines ignored.
    pub fn read_replay<R: BufRead>(reader: R, num_items: usize, origin: &str) -> Result<Self> {
        let mut items = Vec::new();
        for (k, line) in reader.lines().enumerate() {
            let line = line?;
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            let id: usize = t
                .parse()
                .map_err(|_| Error::parse(origin, k as u64 + 1, format!("bad item id {t:?}")))?;
            if id >= num_items {
                return Err(Error::UnknownItem(id));
            }
            items.push(id);
        }
        if items.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "{origin}: replay file has no requests"
            )));
        }
        Ok(RequestStream::replay(items))
    }

    pub fn write_replay<W: Write>(&self, mut out: W) -> Result<()> {
        for id in self.iter() {
            writeln!(out, "{id}")?;
        }
        Ok(())
    }
}

#[allow(clippy::large_enum_variant)]
pub enum RequestIter<'a> {
    Sampled {
        cdf: &'a [f64],
        last: usize,
        rng: ChaCha8Rng,
        remaining: usize,
    },
    Replay(std::slice::Iter<'a, usize>),
}

impl Iterator for RequestIter<'_> {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        match self {
            RequestIter::Sampled {
                cdf,
                last,
                rng,
                remaining,
            } => {
                if *remaining == 0 {
                    return None;
                }
                *remaining -= 1;
                let u: f64 = rng.gen();
                let k = cdf.partition_point(|&c| c <= u);
                Some(k.min(*last))
            }
            RequestIter::Replay(it) => it.next().copied(),
        }
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = match self {
            RequestIter::Sampled { remaining, .. } => *remaining,
            RequestIter::Replay(it) => it.len(),
        };
        (n, Some(n))
    }
}

impl ExactSizeIterator for RequestIter<'_> {}

/// `r` i.i.d. requests drawn from `profile`, reproducible from `seed`.
pub fn gen_requests(profile: &PopularityProfile, r: usize, seed: u64) -> Result<RequestStream> {
    if r == 0 {
        return Err(Error::InvalidParameter(
            "request count must be at least 1".into(),
        ));
    }
    let mut acc = 0.0;
    let cdf: Vec<f64> = profile
        .probabilities()
        .iter()
        .map(|p| {
            acc += p;
            acc
        })
        .collect();
    // Draws past the rounded total fall on the last item with positive mass.
    let last = profile
        .probabilities()
        .iter()
        .rposition(|&p| p > 0.0)
        .expect("profile has positive mass");
    Ok(RequestStream {
        source: StreamSource::Sampled {
            cdf: cdf.into(),
            last,
            seed,
        },
        len: r,
    })
}
