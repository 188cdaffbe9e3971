//! Raw location updates and a venue catalog in, candidate sets out.
//!
//! Pipeline per user: dwell filter -> local-time slot -> keep the
//! longest-dwell update of each slot -> venues intersecting its uncertainty
//! circle -> canonical categories.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Read;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{NutfError, Result};
use crate::tensor::{CandidateSets, ProblemDims};

/// Mean Earth radius used by [`haversine_m`].
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;
pub const DEFAULT_MIN_DWELL_S: i64 = 20 * 60;
pub const DEFAULT_VENUE_RADIUS_M: f64 = 50.0;
/// Grid cell size of [`VenueIndex`], in degrees.
pub const DEFAULT_CELL_DEG: f64 = 0.01;

const SECONDS_PER_DAY: i64 = 86_400;
const MAX_UTC_OFFSET_MIN: i32 = 18 * 60;

/// Start hours (local) of the ten non-uniform daily bins. The last bin wraps
/// past midnight to 01:00.
pub const PAPER_BIN_STARTS: [u32; 10] = [1, 7, 9, 11, 13, 15, 17, 19, 21, 23];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationUpdate {
    pub user_id: String,
    pub timestamp_utc: i64,
    pub lat: f64,
    pub lon: f64,
    pub error_radius_m: f64,
    pub utc_offset_minutes: i32,
}

impl LocationUpdate {
    pub fn validate(&self) -> Result<()> {
        check_coords(self.lat, self.lon)?;
        if !(self.error_radius_m.is_finite() && self.error_radius_m >= 0.0) {
            return Err(NutfError::InvalidInput(format!(
                "error radius must be finite and >= 0, got {}",
                self.error_radius_m
            )));
        }
        if self.utc_offset_minutes.abs() > MAX_UTC_OFFSET_MIN {
            return Err(NutfError::InvalidInput(format!(
                "utc offset {} min out of range",
                self.utc_offset_minutes
            )));
        }
        Ok(())
    }

    pub fn local_seconds(&self) -> i64 {
        self.timestamp_utc + i64::from(self.utc_offset_minutes) * 60
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Venue {
    pub venue_id: String,
    pub category: String,
    pub lat: f64,
    pub lon: f64,
    pub radius_m: f64,
}

impl Venue {
    pub fn validate(&self) -> Result<()> {
        check_coords(self.lat, self.lon)?;
        if !(self.radius_m.is_finite() && self.radius_m > 0.0) {
            return Err(NutfError::InvalidInput(format!(
                "venue {} radius must be finite and > 0, got {}",
                self.venue_id, self.radius_m
            )));
        }
        Ok(())
    }
}

fn check_coords(lat: f64, lon: f64) -> Result<()> {
    if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
        return Err(NutfError::InvalidInput(format!(
            "coordinates ({lat}, {lon}) out of bounds"
        )));
    }
    Ok(())
}

/// Great-circle distance in meters between two (lat, lon) points in degrees.
pub fn haversine_m(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (p1, p2) = (a.0.to_radians(), b.0.to_radians());
    let dp = p2 - p1;
    let dl = (b.1 - a.1).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// An update that survived the dwell filter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dwell<'a> {
    pub update: &'a LocationUpdate,
    /// Seconds until the user's next update.
    pub dwell_s: i64,
}

/// Keeps the updates of one user whose dwell time (gap to the next update)
/// is at least `min_dwell_s`. The last update has no successor and is dropped.
pub fn dwell_filter(updates: &[LocationUpdate], min_dwell_s: i64) -> Result<Vec<Dwell<'_>>> {
    if let Some(w) = updates.windows(2).find(|w| w[1].timestamp_utc < w[0].timestamp_utc) {
        return Err(NutfError::InvalidInput(format!(
            "updates for user {} not sorted by timestamp ({} after {})",
            w[1].user_id, w[1].timestamp_utc, w[0].timestamp_utc
        )));
    }
    Ok(updates
        .windows(2)
        .map(|w| Dwell {
            update: &w[0],
            dwell_s: w[1].timestamp_utc - w[0].timestamp_utc,
        })
        .filter(|d| d.dwell_s >= min_dwell_s)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotMode {
    /// Ten bins per day starting at 01, 07, 09, ..., 21, 23 local time.
    PaperBins,
    Hourly,
}

impl SlotMode {
    pub fn bins_per_day(self) -> usize {
        match self {
            SlotMode::PaperBins => PAPER_BIN_STARTS.len(),
            SlotMode::Hourly => 24,
        }
    }
}

/// Maps local time to a slot index within a window of whole local days.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotScheme {
    pub mode: SlotMode,
    /// First local calendar day of the window, in days since 1970-01-01.
    pub epoch_day: i64,
    pub n_days: usize,
}

impl SlotScheme {
    pub fn n_slots(&self) -> usize {
        self.n_days * self.mode.bins_per_day()
    }

    /// Smallest window of whole days holding every update, or `None` for an
    /// empty list.
    pub fn covering(mode: SlotMode, updates: &[LocationUpdate]) -> Option<SlotScheme> {
        let days = updates.iter().map(|u| local_day(u.local_seconds(), mode));
        let (lo, hi) = days.fold(None, |acc: Option<(i64, i64)>, d| match acc {
            None => Some((d, d)),
            Some((lo, hi)) => Some((lo.min(d), hi.max(d))),
        })?;
        Some(SlotScheme {
            mode,
            epoch_day: lo,
            n_days: (hi - lo + 1) as usize,
        })
    }
}

/// Day a local time is binned into: for paper bins, 00:00-01:00 belongs to
/// the previous day.
fn local_day(local_seconds: i64, mode: SlotMode) -> i64 {
    let shift = match mode {
        SlotMode::PaperBins => i64::from(PAPER_BIN_STARTS[0]) * 3600,
        SlotMode::Hourly => 0,
    };
    (local_seconds - shift).div_euclid(SECONDS_PER_DAY)
}

/// Bin of a local minute-of-day, and whether it belongs to the previous day
/// (true only for paper bins before 01:00).
pub fn bin_of_minute(minute_of_day: u32, mode: SlotMode) -> (usize, bool) {
    let hour = minute_of_day / 60 % 24;
    match mode {
        SlotMode::Hourly => (hour as usize, false),
        SlotMode::PaperBins => {
            if hour < PAPER_BIN_STARTS[0] {
                return (PAPER_BIN_STARTS.len() - 1, true);
            }
            let bin = PAPER_BIN_STARTS.iter().rposition(|&s| s <= hour).unwrap_or(0);
            (bin, false)
        }
    }
}

/// Slot index of a UTC timestamp given the update's UTC offset.
pub fn slot_of(timestamp_utc: i64, utc_offset_minutes: i32, scheme: &SlotScheme) -> Result<usize> {
    let local = timestamp_utc + i64::from(utc_offset_minutes) * 60;
    let mut day = local.div_euclid(SECONDS_PER_DAY);
    let minute = (local.rem_euclid(SECONDS_PER_DAY) / 60) as u32;
    let (bin, previous_day) = bin_of_minute(minute, scheme.mode);
    if previous_day {
        day -= 1;
    }
    let offset = day - scheme.epoch_day;
    if offset < 0 || offset >= scheme.n_days as i64 {
        return Err(NutfError::OutOfWindow {
            timestamp: timestamp_utc,
        });
    }
    Ok(offset as usize * scheme.mode.bins_per_day() + bin)
}

/// Venue catalog with a fixed-size lat/lon grid for radius queries.
#[derive(Debug, Clone)]
pub struct VenueIndex {
    venues: Vec<Venue>,
    cell_deg: f64,
    max_radius_m: f64,
    cells: HashMap<(i64, i64), Vec<usize>>,
}

impl VenueIndex {
    pub fn new(venues: Vec<Venue>) -> Result<Self> {
        Self::with_cell_size(venues, DEFAULT_CELL_DEG)
    }

    pub fn with_cell_size(venues: Vec<Venue>, cell_deg: f64) -> Result<Self> {
        if !(cell_deg.is_finite() && cell_deg > 0.0 && cell_deg <= 90.0) {
            return Err(NutfError::InvalidInput(format!("cell size {cell_deg} out of range")));
        }
        let mut cells: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        let mut max_radius_m: f64 = 0.0;
        for (i, v) in venues.iter().enumerate() {
            v.validate()?;
            max_radius_m = max_radius_m.max(v.radius_m);
            cells.entry(cell_of(v.lat, v.lon, cell_deg)).or_default().push(i);
        }
        Ok(VenueIndex {
            venues,
            cell_deg,
            max_radius_m,
            cells,
        })
    }

    pub fn venues(&self) -> &[Venue] {
        &self.venues
    }

    pub fn len(&self) -> usize {
        self.venues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.venues.is_empty()
    }

    /// Indices (ascending) of venues whose circle intersects the update's
    /// uncertainty circle: `haversine <= error_radius + venue_radius`.
    pub fn candidate_venues(&self, update: &LocationUpdate) -> Vec<usize> {
        let at = (update.lat, update.lon);
        let hits = |i: &usize| {
            let v = &self.venues[*i];
            haversine_m(at, (v.lat, v.lon)) <= update.error_radius_m + v.radius_m
        };
        let mut out: Vec<usize> = match self.search_cells(at, update.error_radius_m + self.max_radius_m) {
            Some(cells) => cells
                .iter()
                .filter_map(|c| self.cells.get(c))
                .flatten()
                .copied()
                .filter(hits)
                .collect(),
            None => (0..self.venues.len()).filter(hits).collect(),
        };
        out.sort_unstable();
        out
    }

    /// Grid cells that can hold a venue within `reach` meters of `at`, or
    /// `None` when a full scan is cheaper or the search wraps a pole.
    ///
    /// Bounds are conservative: latitude via `d >= R |dphi|`, longitude via
    /// `sin^2(d/2R) >= cos(phi1) cos(phi2) sin^2(dlambda/2)`.
    fn search_cells(&self, at: (f64, f64), reach: f64) -> Option<Vec<(i64, i64)>> {
        let ang = reach / EARTH_RADIUS_M;
        if ang >= std::f64::consts::FRAC_PI_2 {
            return None;
        }
        let pad = 1e-9;
        let dlat = ang.to_degrees() + pad;
        let (lat_lo, lat_hi) = (at.0 - dlat, at.0 + dlat);
        if lat_lo <= -90.0 || lat_hi >= 90.0 {
            return None;
        }
        let cos_min = lat_lo.to_radians().cos().min(lat_hi.to_radians().cos());
        let denom = (at.0.to_radians().cos() * cos_min).sqrt();
        let s = (ang / 2.0).sin() / denom;
        if !(s < 1.0) {
            return None;
        }
        let dlon = (2.0 * s.asin()).to_degrees() + pad;
        if dlon >= 180.0 {
            return None;
        }

        let d = self.cell_deg;
        let (r0, r1) = (cell_coord(lat_lo, d), cell_coord(lat_hi, d));
        let (c0, c1) = (cell_coord(at.1 - dlon, d), cell_coord(at.1 + dlon, d));
        let lon_cells = (360.0 / d).ceil() as i64;
        let span = (c1 - c0 + 1).min(lon_cells);
        let visit = (r1 - r0 + 1).saturating_mul(span);
        if visit as usize > self.venues.len().max(16) {
            return None;
        }
        let mut out = Vec::with_capacity(visit as usize);
        for r in r0..=r1 {
            for c in c0..c0 + span {
                out.push((r, wrap_lon_cell(c, d, lon_cells)));
            }
        }
        out.sort_unstable();
        out.dedup();
        Some(out)
    }
}

fn cell_coord(deg: f64, cell_deg: f64) -> i64 {
    (deg / cell_deg).floor() as i64
}

fn wrap_lon_cell(c: i64, cell_deg: f64, lon_cells: i64) -> i64 {
    // Longitude cells are indexed from -180; wrap around the antimeridian.
    let base = cell_coord(-180.0, cell_deg);
    (c - base).rem_euclid(lon_cells) + base
}

fn cell_of(lat: f64, lon: f64, cell_deg: f64) -> (i64, i64) {
    let lon_cells = (360.0 / cell_deg).ceil() as i64;
    (
        cell_coord(lat, cell_deg),
        wrap_lon_cell(cell_coord(lon, cell_deg), cell_deg, lon_cells),
    )
}

/// Raw venue category -> canonical category index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryMap {
    raw: BTreeMap<String, usize>,
    names: Vec<String>,
    other: Option<usize>,
}

impl CategoryMap {
    /// Builds the map from `(raw, canonical)` pairs. Canonical names are
    /// indexed in sorted order; `other`, if given, receives unmapped raw names.
    pub fn from_pairs<I>(pairs: I, other: Option<&str>) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let pairs: Vec<(String, String)> = pairs.into_iter().collect();
        let mut names: BTreeSet<String> = pairs.iter().map(|p| p.1.clone()).collect();
        if let Some(o) = other {
            names.insert(o.to_string());
        }
        let names: Vec<String> = names.into_iter().collect();
        let index = |n: &str| names.binary_search_by(|x| x.as_str().cmp(n)).ok();
        let mut raw = BTreeMap::new();
        for (r, c) in &pairs {
            let k = index(c).expect("canonical name present");
            if let Some(prev) = raw.insert(r.clone(), k) {
                if prev != k {
                    return Err(NutfError::InvalidInput(format!(
                        "raw category {r:?} mapped to two canonical categories"
                    )));
                }
            }
        }
        let other = other.and_then(index);
        if names.is_empty() {
            return Err(NutfError::InvalidInput("empty category map".into()));
        }
        Ok(CategoryMap { raw, names, other })
    }

    /// Every distinct venue category maps to itself.
    pub fn identity<'a, I: IntoIterator<Item = &'a str>>(categories: I) -> Result<Self> {
        Self::from_pairs(categories.into_iter().map(|c| (c.to_string(), c.to_string())), None)
    }

    pub fn lookup(&self, raw: &str) -> Result<usize> {
        self.raw
            .get(raw)
            .copied()
            .or(self.other)
            .ok_or_else(|| NutfError::UnknownCategory(raw.to_string()))
    }

    /// Canonical category names; position = category index.
    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// Output of [`build_candidate_sets`].
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessed {
    pub omega: CandidateSets,
    /// User ids; position = user index.
    pub users: Vec<String>,
    /// Canonical category names; position = category index.
    pub categories: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub scheme: SlotScheme,
    pub min_dwell_s: i64,
}

/// Runs the full preprocessing pipeline.
///
/// Updates may arrive in any order; each user's updates are sorted by
/// timestamp (stably) before the dwell filter. Kept updates outside the slot
/// window are skipped. Every user id in the input is indexed, in sorted
/// order, even if none of its updates yields a candidate set.
pub fn build_candidate_sets(
    updates: &[LocationUpdate],
    venues: &VenueIndex,
    categories: &CategoryMap,
    cfg: &PipelineConfig,
) -> Result<Preprocessed> {
    for u in updates {
        u.validate()?;
    }
    let mut by_user: BTreeMap<&str, Vec<LocationUpdate>> = BTreeMap::new();
    for u in updates {
        by_user.entry(u.user_id.as_str()).or_default().push(u.clone());
    }
    let per_user: Vec<(&str, Vec<(usize, Vec<usize>)>)> = by_user
        .into_par_iter()
        .map(|(user, mut list)| {
            list.sort_by_key(|u| u.timestamp_utc);
            let blocks = user_blocks(&list, venues, categories, cfg)?;
            Ok((user, blocks))
        })
        .collect::<Result<_>>()?;

    let users: Vec<String> = per_user.iter().map(|(u, _)| u.to_string()).collect();
    if users.is_empty() {
        return Err(NutfError::InvalidInput("no location updates".into()));
    }
    let dims = ProblemDims::new(users.len(), cfg.scheme.n_slots(), categories.len())?;
    let triples = per_user
        .into_iter()
        .enumerate()
        .flat_map(|(i, (_, blocks))| blocks.into_iter().map(move |(s, c)| (i, s, c)));
    let omega = CandidateSets::from_blocks(dims, triples)?;
    Ok(Preprocessed {
        omega,
        users,
        categories: categories.names().to_vec(),
    })
}

fn user_blocks(
    sorted: &[LocationUpdate],
    venues: &VenueIndex,
    categories: &CategoryMap,
    cfg: &PipelineConfig,
) -> Result<Vec<(usize, Vec<usize>)>> {
    let mut best: BTreeMap<usize, Dwell<'_>> = BTreeMap::new();
    for d in dwell_filter(sorted, cfg.min_dwell_s)? {
        let slot = match slot_of(d.update.timestamp_utc, d.update.utc_offset_minutes, &cfg.scheme) {
            Ok(s) => s,
            Err(NutfError::OutOfWindow { .. }) => continue,
            Err(e) => return Err(e),
        };
        // Strictly longer wins, so ties keep the earlier update.
        match best.get(&slot) {
            Some(prev) if prev.dwell_s >= d.dwell_s => {}
            _ => {
                best.insert(slot, d);
            }
        }
    }
    let mut out = Vec::with_capacity(best.len());
    for (slot, d) in best {
        let mut cats = Vec::new();
        for v in venues.candidate_venues(d.update) {
            cats.push(categories.lookup(&venues.venues()[v].category)?);
        }
        cats.sort_unstable();
        cats.dedup();
        if !cats.is_empty() {
            out.push((slot, cats));
        }
    }
    Ok(out)
}

fn read_csv<T, R>(input: R) -> Result<Vec<T>>
where
    T: serde::de::DeserializeOwned,
    R: Read,
{
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let mut out = Vec::new();
    for rec in reader.deserialize::<T>() {
        out.push(rec.map_err(csv_error)?);
    }
    Ok(out)
}

fn csv_error(e: csv::Error) -> NutfError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => NutfError::Io(io),
        kind => NutfError::parse(line, format!("{kind:?}")),
    }
}

/// Reads `user_id,timestamp_utc,lat,lon,error_radius_m,utc_offset_minutes`.
pub fn read_updates<R: Read>(input: R) -> Result<Vec<LocationUpdate>> {
    let rows: Vec<LocationUpdate> = read_csv(input)?;
    for (i, u) in rows.iter().enumerate() {
        u.validate().map_err(|e| NutfError::parse(i as u64 + 2, e.to_string()))?;
    }
    Ok(rows)
}

#[derive(Deserialize)]
struct VenueRow {
    venue_id: String,
    category: String,
    lat: f64,
    lon: f64,
    #[serde(default)]
    radius_m: Option<f64>,
}

/// Reads `venue_id,category,lat,lon,radius_m`; an empty `radius_m` field
/// takes `default_radius_m`.
pub fn read_venues<R: Read>(input: R, default_radius_m: f64) -> Result<Vec<Venue>> {
    let rows: Vec<VenueRow> = read_csv(input)?;
    let mut out = Vec::with_capacity(rows.len());
    for (i, r) in rows.into_iter().enumerate() {
        let v = Venue {
            venue_id: r.venue_id,
            category: r.category,
            lat: r.lat,
            lon: r.lon,
            radius_m: r.radius_m.unwrap_or(default_radius_m),
        };
        v.validate().map_err(|e| NutfError::parse(i as u64 + 2, e.to_string()))?;
        out.push(v);
    }
    Ok(out)
}

#[derive(Deserialize)]
struct CategoryRow {
    raw_category: String,
    canonical_category: String,
}

/// Reads `raw_category,canonical_category` pairs.
pub fn read_category_map<R: Read>(input: R) -> Result<Vec<(String, String)>> {
    let rows: Vec<CategoryRow> = read_csv(input)?;
    Ok(rows
        .into_iter()
        .map(|r| (r.raw_category, r.canonical_category))
        .collect())
}
