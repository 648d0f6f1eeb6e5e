//! Daily market panels: loading, validation, slicing, state-tensor
//! construction, and a synthetic generator for desk-scale testing.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use chrono::{Days, NaiveDate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TrackerError};

/// Aligned daily series for one stock universe. `prices` and `volumes` are
/// day-major; a `NaN` price marks a stock with no data on that day (only
/// tolerated until universe filtering slices it away).
#[derive(Debug, Clone)]
pub struct MarketPanel {
    pub dates: Vec<String>,
    pub tickers: Vec<String>,
    pub index_level: Vec<f64>,
    pub vix: Option<Vec<f64>>,
    pub tbill: Vec<f64>,
    pub prices: Vec<Vec<f64>>,
    pub volumes: Vec<Vec<f64>>,
}

/// Column mapping for panel files. The VIX series is optional; when marked
/// absent the state tensor narrows accordingly.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PanelSchema {
    pub has_vix: bool,
}

impl Default for PanelSchema {
    fn default() -> Self {
        PanelSchema { has_vix: true }
    }
}

fn valid_iso_date(s: &str) -> bool {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").is_ok()
}

impl MarketPanel {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn n_stocks(&self) -> usize {
        self.tickers.len()
    }

    /// Check alignment, ordering, and positivity invariants. Present prices
    /// must be strictly positive; `NaN` (absent) cells pass here and are
    /// caught by [`MarketPanel::validate_complete`].
    pub fn validate(&self) -> Result<()> {
        let d = self.dates.len();
        let n = self.tickers.len();
        if self.index_level.len() != d
            || self.tbill.len() != d
            || self.prices.len() != d
            || self.volumes.len() != d
            || self.vix.as_ref().map_or(false, |v| v.len() != d)
        {
            return Err(TrackerError::Data(
                "misaligned panel series: all columns must cover the same dates".into(),
            ));
        }
        for (day, date) in self.dates.iter().enumerate() {
            if !valid_iso_date(date) {
                return Err(TrackerError::Data(format!(
                    "date '{date}' on row {day} is not ISO-8601"
                )));
            }
            if day > 0 && self.dates[day - 1].as_str() >= date.as_str() {
                return Err(TrackerError::Data(format!(
                    "dates not strictly increasing at row {day} ({} then {date})",
                    self.dates[day - 1]
                )));
            }
            if !(self.index_level[day] > 0.0) {
                return Err(TrackerError::Data(format!(
                    "non-positive index level {} on {date} (day {day})",
                    self.index_level[day]
                )));
            }
            if self.prices[day].len() != n || self.volumes[day].len() != n {
                return Err(TrackerError::Data(format!(
                    "row {day} has {} prices and {} volumes for {n} tickers",
                    self.prices[day].len(),
                    self.volumes[day].len()
                )));
            }
            for (i, p) in self.prices[day].iter().enumerate() {
                if !p.is_nan() && !(*p > 0.0) {
                    return Err(TrackerError::Data(format!(
                        "non-positive price {p} for {} on {date} (day {day})",
                        self.tickers[i]
                    )));
                }
                let v = self.volumes[day][i];
                if !v.is_nan() && v < 0.0 {
                    return Err(TrackerError::Data(format!(
                        "negative volume {v} for {} on {date} (day {day})",
                        self.tickers[i]
                    )));
                }
            }
        }
        Ok(())
    }

    /// Require every price cell to be present (training and evaluation
    /// panels must be gap-free).
    pub fn validate_complete(&self) -> Result<()> {
        self.validate()?;
        for (day, row) in self.prices.iter().enumerate() {
            for (i, p) in row.iter().enumerate() {
                if p.is_nan() {
                    return Err(TrackerError::Data(format!(
                        "missing price for {} on {} (day {day})",
                        self.tickers[i], self.dates[day]
                    )));
                }
            }
        }
        Ok(())
    }

    /// Indices of stocks with complete data on every day of `lo..=hi`.
    pub fn complete_stocks(&self, lo: usize, hi: usize) -> Vec<usize> {
        (0..self.n_stocks())
            .filter(|&i| (lo..=hi).all(|d| !self.prices[d][i].is_nan()))
            .collect()
    }

    /// Sub-panel over days `lo..=hi` and the given stock indices.
    pub fn slice(&self, lo: usize, hi: usize, stocks: &[usize]) -> MarketPanel {
        let take = |row: &Vec<f64>| stocks.iter().map(|&i| row[i]).collect::<Vec<f64>>();
        MarketPanel {
            dates: self.dates[lo..=hi].to_vec(),
            tickers: stocks.iter().map(|&i| self.tickers[i].clone()).collect(),
            index_level: self.index_level[lo..=hi].to_vec(),
            vix: self.vix.as_ref().map(|v| v[lo..=hi].to_vec()),
            tbill: self.tbill[lo..=hi].to_vec(),
            prices: self.prices[lo..=hi].iter().map(take).collect(),
            volumes: self.volumes[lo..=hi].iter().map(take).collect(),
        }
    }

    /// Width of a state row for this panel: `2N + 3`, or `2N + 2` when the
    /// VIX series is absent.
    pub fn state_width(&self) -> usize {
        2 * self.n_stocks() + 2 + usize::from(self.vix.is_some())
    }

    /// Feature row for one day: index return, VIX (if present), T-bill rate,
    /// per-stock returns, per-stock volumes. Needs `day >= 1` for returns.
    fn feature_row(&self, day: usize, out: &mut Vec<f64>) -> Result<()> {
        out.push(self.index_level[day] / self.index_level[day - 1] - 1.0);
        if let Some(vix) = &self.vix {
            out.push(vix[day]);
        }
        out.push(self.tbill[day]);
        for i in 0..self.n_stocks() {
            let p0 = self.prices[day - 1][i];
            let p1 = self.prices[day][i];
            if p0.is_nan() || p1.is_nan() {
                return Err(TrackerError::Data(format!(
                    "missing price for {} around {} while building state",
                    self.tickers[i], self.dates[day]
                )));
            }
            out.push(p1 / p0 - 1.0);
        }
        for i in 0..self.n_stocks() {
            out.push(self.volumes[day][i]);
        }
        Ok(())
    }
}

/// Period/day bookkeeping: `m` trading days per period, `n_s` look-back
/// periods, `n` episode length in periods, `n_b` rebalancing stride in days.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TimeGrid {
    pub m: usize,
    pub n_s: usize,
    pub n: usize,
    pub n_b: usize,
}

impl TimeGrid {
    pub fn validate(&self, panel_days: usize) -> Result<()> {
        if self.m == 0 || self.n_s == 0 || self.n == 0 {
            return Err(TrackerError::Config(
                "time grid fields m, n_s, n must all be >= 1".into(),
            ));
        }
        if self.n_b == 0 || self.n_b > self.m {
            return Err(TrackerError::Config(format!(
                "rebalancing stride n_b = {} must satisfy 1 <= n_b <= M = {}",
                self.n_b, self.m
            )));
        }
        if self.n_b != self.m && self.m % self.n_b != 0 {
            return Err(TrackerError::Config(format!(
                "stride n_b = {} must divide M = {} (or equal it)",
                self.n_b, self.m
            )));
        }
        if self.n_s * self.m > panel_days {
            return Err(TrackerError::Config(format!(
                "look-back of {} days exceeds panel length {panel_days}",
                self.n_s * self.m
            )));
        }
        Ok(())
    }

    /// Days of history a state window consumes.
    pub fn lookback_days(&self) -> usize {
        self.n_s * self.m
    }

    /// Absolute panel day of period start `t` (period 0 sits after the
    /// look-back buffer).
    pub fn day_of_period(&self, t: usize) -> usize {
        self.lookback_days() + t * self.m
    }
}

/// Look-back window of market features, shape `(n_s * M) x (2N + 3)`,
/// flattened day-major.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl StateTensor {
    pub fn flat(&self) -> &[f64] {
        &self.data
    }
}

/// State tensor whose last row is the observation at absolute panel day
/// `day`; the window spans the `n_s * M` days ending there. Entries never
/// reference days after `day`.
pub fn build_state_at_day(panel: &MarketPanel, grid: &TimeGrid, day: usize) -> Result<StateTensor> {
    let window = grid.lookback_days();
    if day >= panel.len() {
        return Err(TrackerError::Data(format!(
            "state day {day} beyond panel of {} days",
            panel.len()
        )));
    }
    if day + 1 < window + 1 {
        return Err(TrackerError::Data(format!(
            "insufficient history: state at day {day} needs {window} prior days plus a return base"
        )));
    }
    let cols = panel.state_width();
    let mut data = Vec::with_capacity(window * cols);
    for d in (day + 1 - window)..=day {
        panel.feature_row(d, &mut data)?;
    }
    Ok(StateTensor {
        rows: window,
        cols,
        data,
    })
}

/// State tensor for period index `t` (market information over `(t - n_s, t]`).
pub fn build_state(panel: &MarketPanel, grid: &TimeGrid, t: usize) -> Result<StateTensor> {
    build_state_at_day(panel, grid, grid.day_of_period(t))
}

/// Per-column affine normalization fitted on a training range. Raw volumes
/// sit around 1e6-1e8 and would saturate tanh layers without this.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StateNormalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl StateNormalizer {
    /// Fit column statistics over the feature rows of days `lo..=hi`
    /// (requires `lo >= 1` for the return base).
    pub fn fit(panel: &MarketPanel, lo: usize, hi: usize) -> Result<StateNormalizer> {
        if lo < 1 || hi >= panel.len() || lo > hi {
            return Err(TrackerError::Config(format!(
                "normalizer range {lo}..={hi} invalid for panel of {} days",
                panel.len()
            )));
        }
        let cols = panel.state_width();
        let mut sum = vec![0.0; cols];
        let mut sum_sq = vec![0.0; cols];
        let mut row = Vec::with_capacity(cols);
        let count = (hi - lo + 1) as f64;
        for d in lo..=hi {
            row.clear();
            panel.feature_row(d, &mut row)?;
            for (c, v) in row.iter().enumerate() {
                sum[c] += v;
                sum_sq[c] += v * v;
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
        let std: Vec<f64> = sum_sq
            .iter()
            .zip(&mean)
            .map(|(sq, m)| ((sq / count - m * m).max(0.0)).sqrt().max(1e-12))
            .collect();
        Ok(StateNormalizer { mean, std })
    }

    /// Identity transform (for runs with normalization disabled).
    pub fn identity(cols: usize) -> StateNormalizer {
        StateNormalizer {
            mean: vec![0.0; cols],
            std: vec![1.0; cols],
        }
    }

    pub fn apply(&self, state: &mut StateTensor) {
        debug_assert_eq!(state.cols, self.mean.len());
        for r in 0..state.rows {
            for c in 0..state.cols {
                let idx = r * state.cols + c;
                state.data[idx] = (state.data[idx] - self.mean[c]) / self.std[c];
            }
        }
    }
}

/// Parameters of the synthetic market generator. The index is a fixed
/// weighted combination of the stock returns, so the tracking ground truth
/// is known exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSpec {
    /// True index weights (length N, must sum to 1).
    pub index_weights: Vec<f64>,
    /// Daily log-drift of each stock.
    pub drift: f64,
    /// Daily log-volatility of each stock.
    pub vol: f64,
    /// Initial price of every stock.
    pub p0: f64,
    /// Initial index level.
    pub index0: f64,
    /// Constant daily simple T-bill rate.
    pub tbill: f64,
    pub with_vix: bool,
}

impl SynthSpec {
    pub fn equal_weight(n: usize) -> SynthSpec {
        SynthSpec {
            index_weights: vec![1.0 / n as f64; n],
            drift: 0.0002,
            vol: 0.01,
            p0: 100.0,
            index0: 1000.0,
            tbill: 0.0001,
            with_vix: true,
        }
    }
}

/// Geometric random-walk panel, deterministic under `seed`.
pub fn synth_panel(seed: u64, n: usize, days: usize, spec: &SynthSpec) -> Result<MarketPanel> {
    if n == 0 || days < 2 {
        return Err(TrackerError::Config(
            "synthetic panel needs N >= 1 and days >= 2".into(),
        ));
    }
    if spec.index_weights.len() != n {
        return Err(TrackerError::Config(format!(
            "{} index weights for {} stocks",
            spec.index_weights.len(),
            n
        )));
    }
    let wsum: f64 = spec.index_weights.iter().sum();
    if (wsum - 1.0).abs() > 1e-9 {
        return Err(TrackerError::Config(format!(
            "index weights sum to {wsum}, expected 1"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let epoch = NaiveDate::from_ymd_opt(2000, 1, 3).expect("valid epoch");
    let tickers: Vec<String> = (0..n).map(|i| format!("S{:02}", i + 1)).collect();

    let mut dates = Vec::with_capacity(days);
    let mut prices = Vec::with_capacity(days);
    let mut volumes = Vec::with_capacity(days);
    let mut index_level = Vec::with_capacity(days);
    let mut vix = Vec::with_capacity(days);

    let mut price_row = vec![spec.p0; n];
    let mut index = spec.index0;
    let mut vix_state = 0.0_f64;

    for day in 0..days {
        let date = epoch + Days::new(day as u64);
        dates.push(date.format("%Y-%m-%d").to_string());

        if day > 0 {
            let mut index_ret = 0.0;
            let mut next = price_row.clone();
            for i in 0..n {
                let z: f64 = StandardNormal.sample(&mut rng);
                let growth = (spec.drift + spec.vol * z).exp();
                next[i] = price_row[i] * growth;
                index_ret += spec.index_weights[i] * (growth - 1.0);
            }
            price_row = next;
            index *= 1.0 + index_ret;
        }
        prices.push(price_row.clone());
        index_level.push(index);

        let zv: f64 = StandardNormal.sample(&mut rng);
        vix_state = 0.95 * vix_state + 0.3 * zv;
        vix.push((20.0 + 5.0 * vix_state).max(1.0));

        let row: Vec<f64> = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                1.0e6 * (0.3 * z).exp()
            })
            .collect();
        volumes.push(row);
    }

    let panel = MarketPanel {
        dates,
        tickers,
        index_level,
        vix: spec.with_vix.then_some(vix),
        tbill: vec![spec.tbill; days],
        prices,
        volumes,
    };
    panel.validate_complete()?;
    Ok(panel)
}

/// Read a panel CSV: header `date,index[,vix],tbill` then `p_<ticker>` /
/// `vol_<ticker>` pairs. Empty price cells mark a stock as absent that day.
pub fn load_panel(path: &Path, schema: &PanelSchema) -> Result<MarketPanel> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let position = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| TrackerError::Data(format!("required column '{name}' missing")))
    };

    let date_col = position("date")?;
    let index_col = position("index")?;
    let tbill_col = position("tbill")?;
    let vix_col = if schema.has_vix {
        Some(position("vix")?)
    } else {
        None
    };

    let mut price_cols: Vec<(String, usize)> = Vec::new();
    let mut volume_cols: HashMap<String, usize> = HashMap::new();
    for (i, h) in headers.iter().enumerate() {
        if let Some(t) = h.strip_prefix("p_") {
            price_cols.push((t.to_string(), i));
        } else if let Some(t) = h.strip_prefix("vol_") {
            volume_cols.insert(t.to_string(), i);
        }
    }
    if price_cols.is_empty() {
        return Err(TrackerError::Data("no p_<ticker> columns found".into()));
    }
    let mut columns = Vec::with_capacity(price_cols.len());
    for (ticker, pcol) in price_cols {
        let vcol = *volume_cols.get(&ticker).ok_or_else(|| {
            TrackerError::Data(format!("ticker {ticker} has a price column but no vol_{ticker}"))
        })?;
        columns.push((ticker, pcol, vcol));
    }

    let parse = |field: &str, what: &str, row: usize| -> Result<f64> {
        field.trim().parse::<f64>().map_err(|_| {
            TrackerError::Data(format!("cannot parse {what} '{field}' on data row {row}"))
        })
    };

    let mut panel = MarketPanel {
        dates: Vec::new(),
        tickers: columns.iter().map(|(t, _, _)| t.clone()).collect(),
        index_level: Vec::new(),
        vix: vix_col.map(|_| Vec::new()),
        tbill: Vec::new(),
        prices: Vec::new(),
        volumes: Vec::new(),
    };

    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        panel.dates.push(record[date_col].to_string());
        panel
            .index_level
            .push(parse(&record[index_col], "index level", row_idx)?);
        panel
            .tbill
            .push(parse(&record[tbill_col], "tbill rate", row_idx)?);
        if let (Some(col), Some(vix)) = (vix_col, panel.vix.as_mut()) {
            vix.push(parse(&record[col], "vix", row_idx)?);
        }
        let mut prow = Vec::with_capacity(columns.len());
        let mut vrow = Vec::with_capacity(columns.len());
        for (ticker, pcol, vcol) in &columns {
            let pfield = record[*pcol].trim();
            if pfield.is_empty() {
                prow.push(f64::NAN);
                vrow.push(f64::NAN);
            } else {
                prow.push(parse(pfield, &format!("price of {ticker}"), row_idx)?);
                vrow.push(parse(
                    &record[*vcol],
                    &format!("volume of {ticker}"),
                    row_idx,
                )?);
            }
        }
        panel.prices.push(prow);
        panel.volumes.push(vrow);
    }

    panel.validate()?;
    Ok(panel)
}

/// Write a panel in the same CSV format `load_panel` reads.
pub fn save_panel(panel: &MarketPanel, path: &Path) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    let mut header = String::from("date,index");
    if panel.vix.is_some() {
        header.push_str(",vix");
    }
    header.push_str(",tbill");
    for t in &panel.tickers {
        header.push_str(&format!(",p_{t},vol_{t}"));
    }
    writeln!(file, "{header}")?;
    for day in 0..panel.len() {
        let mut line = format!("{},{}", panel.dates[day], panel.index_level[day]);
        if let Some(vix) = &panel.vix {
            line.push_str(&format!(",{}", vix[day]));
        }
        line.push_str(&format!(",{}", panel.tbill[day]));
        for i in 0..panel.n_stocks() {
            let p = panel.prices[day][i];
            if p.is_nan() {
                line.push_str(",,");
            } else {
                line.push_str(&format!(",{p},{}", panel.volumes[day][i]));
            }
        }
        writeln!(file, "{line}")?;
    }
    Ok(())
}
