//! Seeded synthetic inverter plant with injectable pre-fault degradations.
//!
//! Irradiance follows a half-sine between sunrise and sunset, scaled by a
//! seasonal factor and a daily clear-sky index. AC power is derived from GTI
//! with a linear thermal loss; DC quantities follow through a fixed inverter
//! efficiency. Voltages sit at their nominal values plus noise, with optional
//! temperature and power coupling, and currents follow from `P = V I`.
//!
//! A fault scenario ramps its tag drifts linearly over `lead_days` before the
//! event, applies them fully during the event and removes them afterwards.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Datelike, Duration, NaiveDate, Timelike, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scada_data::{
    write_logbook, write_scada_csv, write_taxonomy, ClassId, FaultEvent, InverterDatasheet, ScadaRecord, Tag,
    TagRange, Taxonomy, TagValues, GRID_STEP_SECS, N_TAGS, SAMPLES_PER_DAY,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftKind {
    /// `value * (1 + amount)` at full strength.
    Multiplicative,
    /// `value + amount` at full strength.
    Additive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Drift {
    pub tag: Tag,
    #[serde(default = "default_kind")]
    pub kind: DriftKind,
    pub amount: f64,
}

fn default_kind() -> DriftKind {
    DriftKind::Multiplicative
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultScenario {
    pub class_id: ClassId,
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
    #[serde(default)]
    pub lead_days: f64,
    #[serde(default)]
    pub signature: Vec<Drift>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub class_id: ClassId,
    pub name: String,
}

/// Noise levels: `*_rel` are relative standard deviations, `temp_abs` in °C.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    pub irradiance_rel: f64,
    pub power_rel: f64,
    pub current_rel: f64,
    pub voltage_rel: f64,
    pub temp_abs: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            irradiance_rel: 0.02,
            power_rel: 0.01,
            current_rel: 0.01,
            voltage_rel: 0.002,
            temp_abs: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub start_date: NaiveDate,
    pub n_days: usize,
    pub gti_peak: f64,
    /// Relative amplitude of the yearly GTI cycle (peak at the June solstice).
    pub seasonal_amplitude: f64,
    pub sunrise_hour: f64,
    pub sunset_hour: f64,
    /// Maximum daily irradiance attenuation; the clear-sky index is
    /// `1 - cloudiness * U(0, 1)` per day.
    pub cloudiness: f64,
    pub ghi_ratio: f64,
    pub performance_ratio: f64,
    pub inverter_efficiency: f64,
    pub p_nom_kw: f64,
    pub max_active_power_kw: f64,
    pub gamma_pct_per_c: f64,
    pub v_dc_nominal: f64,
    /// MPPT voltage change per °C of module temperature above 25 °C, %.
    /// Zero keeps the DC voltage at nominal.
    pub v_dc_temp_coeff_pct: f64,
    pub v_ac_nominal: f64,
    /// Relative grid-voltage rise at nominal power injection.
    pub v_ac_rise: f64,
    pub t_amb_mean: f64,
    pub t_amb_seasonal: f64,
    pub t_amb_diurnal: f64,
    /// `T_mod = m_t * T_amb + b_t + c_t * GTI`
    pub t_mod_m: f64,
    pub t_mod_b: f64,
    pub t_mod_c: f64,
    /// `T_int = T_amb + offset + gain * P_AC / P_nom`
    pub t_int_offset: f64,
    pub t_int_gain: f64,
    pub noise: NoiseConfig,
    /// Student-t (3 dof) noise instead of Gaussian.
    pub heavy_tail: bool,
    /// Probability that any single value is missing.
    pub missing_rate: f64,
    pub classes: Vec<ClassSpec>,
    pub faults: Vec<FaultScenario>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            start_date: NaiveDate::from_ymd_opt(2015, 1, 1).expect("valid date"),
            n_days: 365,
            gti_peak: 1000.0,
            seasonal_amplitude: 0.15,
            sunrise_hour: 6.0,
            sunset_hour: 18.0,
            cloudiness: 0.2,
            ghi_ratio: 0.9,
            performance_ratio: 0.85,
            inverter_efficiency: 0.97,
            p_nom_kw: 385.0,
            max_active_power_kw: 385.0,
            gamma_pct_per_c: 0.4,
            v_dc_nominal: 600.0,
            v_dc_temp_coeff_pct: 0.0,
            v_ac_nominal: 400.0,
            v_ac_rise: 0.0,
            t_amb_mean: 18.0,
            t_amb_seasonal: 8.0,
            t_amb_diurnal: 5.0,
            t_mod_m: 1.0,
            t_mod_b: 1.0,
            t_mod_c: 0.025,
            t_int_offset: 8.0,
            t_int_gain: 15.0,
            noise: NoiseConfig::default(),
            heavy_tail: false,
            missing_rate: 0.0,
            classes: vec![
                ClassSpec { class_id: 1, name: "inverter_overtemperature".into() },
                ClassSpec { class_id: 2, name: "dc_insulation_fault".into() },
                ClassSpec { class_id: 3, name: "grid_disconnection".into() },
            ],
            faults: Vec::new(),
        }
    }
}

impl SynthConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SynthConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("synth config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn start(&self) -> DateTime<Utc> {
        self.start_date.and_hms_opt(0, 0, 0).expect("midnight").and_utc()
    }

    pub fn end(&self) -> DateTime<Utc> {
        self.start() + Duration::days(self.n_days as i64) - Duration::seconds(GRID_STEP_SECS)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_days == 0 {
            return bad("n_days must be >= 1".into());
        }
        if !(0.0 <= self.sunrise_hour && self.sunrise_hour < self.sunset_hour && self.sunset_hour <= 24.0) {
            return bad("need 0 <= sunrise_hour < sunset_hour <= 24".into());
        }
        if !(0.0..=1.0).contains(&self.cloudiness) || !(0.0..1.0).contains(&self.missing_rate) {
            return bad("cloudiness must lie in [0, 1] and missing_rate in [0, 1)".into());
        }
        let positive = [
            self.gti_peak,
            self.performance_ratio,
            self.inverter_efficiency,
            self.p_nom_kw,
            self.max_active_power_kw,
            self.v_dc_nominal,
            self.v_ac_nominal,
        ];
        if positive.iter().any(|v| !(*v > 0.0)) {
            return bad("irradiance peak, ratios, powers and voltages must be > 0".into());
        }
        let taxonomy = self.taxonomy()?;
        let (lo, hi) = (self.start(), self.end());
        for (i, f) in self.faults.iter().enumerate() {
            if !taxonomy.contains(f.class_id) {
                return bad(format!("fault {i}: class {} is not declared", f.class_id));
            }
            if f.start > f.end || f.start < lo || f.end > hi {
                return bad(format!("fault {i}: event must satisfy start <= end inside the simulated range"));
            }
            if !(f.lead_days >= 0.0) {
                return bad(format!("fault {i}: lead_days must be >= 0"));
            }
            for g in &self.faults[..i] {
                if g.class_id == f.class_id && g.start <= f.end && f.start <= g.end {
                    return bad(format!("fault {i} overlaps an earlier event of class {}", f.class_id));
                }
            }
        }
        Ok(())
    }

    pub fn taxonomy(&self) -> Result<Taxonomy> {
        Taxonomy::new(self.classes.iter().map(|c| (c.class_id, c.name.clone())))
            .map_err(|e| Error::Config(format!("synth classes: {e}")))
    }

    pub fn datasheet(&self) -> InverterDatasheet {
        let p_dc_max = 1.5 * self.p_nom_kw / self.inverter_efficiency;
        let ranges = [
            (Tag::IDc, 0.0, p_dc_max * 1000.0 / self.v_dc_nominal),
            (Tag::VDc, 0.0, 2.0 * self.v_dc_nominal),
            (Tag::PDc, 0.0, p_dc_max),
            (Tag::IAc, 0.0, 1.5 * self.max_active_power_kw * 1000.0 / (3f64.sqrt() * self.v_ac_nominal)),
            (Tag::VAc, 0.0, 2.0 * self.v_ac_nominal),
            (Tag::PAc, 0.0, self.max_active_power_kw),
            (Tag::TInt, -40.0, 120.0),
            (Tag::TMod, -40.0, 120.0),
            (Tag::TAmb, -50.0, 60.0),
            (Tag::Gti, 0.0, 2.0 * self.gti_peak),
            (Tag::Ghi, 0.0, 2.0 * self.gti_peak),
        ];
        InverterDatasheet {
            p_nom_kw: self.p_nom_kw,
            gamma_pct_per_c: self.gamma_pct_per_c,
            max_active_power_kw: self.max_active_power_kw,
            tag_ranges: ranges
                .into_iter()
                .map(|(t, min, max)| (t.name().to_string(), TagRange { min, max }))
                .collect(),
        }
    }
}

/// Generated plant in memory plus the serialized files.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub records: Vec<ScadaRecord>,
    pub events: Vec<FaultEvent>,
    pub taxonomy: Taxonomy,
    pub datasheet: InverterDatasheet,
    pub scada_csv: String,
    pub logbook_csv: String,
    pub taxonomy_csv: String,
    pub datasheet_json: String,
}

pub const SCADA_FILE: &str = "scada.csv";
pub const LOGBOOK_FILE: &str = "logbook.csv";
pub const TAXONOMY_FILE: &str = "taxonomy.csv";
pub const DATASHEET_FILE: &str = "datasheet.json";

struct Noise {
    gauss: Normal<f64>,
    student: StudentT<f64>,
    heavy: bool,
}

impl Noise {
    fn new(heavy: bool) -> Self {
        Noise {
            gauss: Normal::new(0.0, 1.0).expect("unit normal"),
            // unit variance for 3 dof
            student: StudentT::new(3.0).expect("3 dof"),
            heavy,
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.heavy {
            self.student.sample(rng) / 3f64.sqrt()
        } else {
            self.gauss.sample(rng)
        }
    }
}

/// Drift strength of a scenario at `t`: linear ramp over the lead window,
/// 1 during the event, 0 otherwise.
fn drift_strength(f: &FaultScenario, t: DateTime<Utc>) -> f64 {
    if t >= f.start && t <= f.end {
        return 1.0;
    }
    if t > f.end || f.lead_days <= 0.0 {
        return 0.0;
    }
    let lead_secs = f.lead_days * 86_400.0;
    let before = (f.start - t).num_seconds() as f64;
    if before > lead_secs {
        0.0
    } else {
        1.0 - before / lead_secs
    }
}

fn round3(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Noise::new(cfg.heavy_tail);
    let n = &cfg.noise;
    let t0 = cfg.start();
    let mut records = Vec::with_capacity(cfg.n_days * SAMPLES_PER_DAY);

    for day in 0..cfg.n_days {
        let date = cfg.start_date + Duration::days(day as i64);
        let doy = date.ordinal() as f64;
        let season = (2.0 * PI * (doy - 172.0) / 365.25).cos();
        let clear_sky = 1.0 - cfg.cloudiness * rng.random::<f64>();
        let amplitude = cfg.gti_peak * (1.0 + cfg.seasonal_amplitude * season) * clear_sky;
        let t_amb_day = cfg.t_amb_mean + cfg.t_amb_seasonal * (2.0 * PI * (doy - 200.0) / 365.25).cos();

        for step in 0..SAMPLES_PER_DAY {
            let t = t0 + Duration::seconds(GRID_STEP_SECS * (day * SAMPLES_PER_DAY + step) as i64);
            let hour = t.hour() as f64 + t.minute() as f64 / 60.0;
            let frac = (hour - cfg.sunrise_hour) / (cfg.sunset_hour - cfg.sunrise_hour);
            let sun = if (0.0..=1.0).contains(&frac) { (PI * frac).sin() } else { 0.0 };

            let gti = (amplitude * sun * (1.0 + n.irradiance_rel * noise.draw(&mut rng))).max(0.0);
            let ghi = (cfg.ghi_ratio * gti * (1.0 + n.irradiance_rel * noise.draw(&mut rng))).max(0.0);
            let t_amb = t_amb_day
                + cfg.t_amb_diurnal * (2.0 * PI * (hour - 9.0) / 24.0).sin()
                + n.temp_abs * noise.draw(&mut rng);
            let t_mod = cfg.t_mod_m * t_amb + cfg.t_mod_b + cfg.t_mod_c * gti + n.temp_abs * noise.draw(&mut rng);
            let k_pv = ((t_mod - 25.0) * cfg.gamma_pct_per_c / 100.0).max(0.0);
            let p_ac_clean = (cfg.performance_ratio * cfg.p_nom_kw * gti / 1200.0 * (1.0 - k_pv)).max(0.0);
            let p_ac = p_ac_clean * (1.0 + n.power_rel * noise.draw(&mut rng));
            let p_dc = p_ac_clean / cfg.inverter_efficiency * (1.0 + n.power_rel * noise.draw(&mut rng));
            let v_dc = cfg.v_dc_nominal
                * (1.0 + cfg.v_dc_temp_coeff_pct / 100.0 * (t_mod - 25.0) + n.voltage_rel * noise.draw(&mut rng));
            let v_ac = cfg.v_ac_nominal
                * (1.0 + cfg.v_ac_rise * p_ac_clean / cfg.p_nom_kw + n.voltage_rel * noise.draw(&mut rng));
            let i_dc = p_dc * 1000.0 / v_dc * (1.0 + n.current_rel * noise.draw(&mut rng));
            let i_ac = p_ac * 1000.0 / (3f64.sqrt() * v_ac) * (1.0 + n.current_rel * noise.draw(&mut rng));
            let t_int = t_amb
                + cfg.t_int_offset
                + cfg.t_int_gain * p_ac_clean / cfg.p_nom_kw
                + n.temp_abs * noise.draw(&mut rng);

            let mut v = [i_dc, v_dc, p_dc, i_ac, v_ac, p_ac, t_int, t_mod, t_amb, gti, ghi];
            for f in &cfg.faults {
                let s = drift_strength(f, t);
                if s == 0.0 {
                    continue;
                }
                for d in &f.signature {
                    let x = &mut v[d.tag.index()];
                    match d.kind {
                        DriftKind::Multiplicative => *x *= 1.0 + d.amount * s,
                        DriftKind::Additive => *x += d.amount * s,
                    }
                }
            }
            for tag in Tag::ALL {
                if tag.is_periodic() {
                    v[tag.index()] = v[tag.index()].max(0.0);
                }
            }
            v[Tag::PAc.index()] = v[Tag::PAc.index()].min(cfg.max_active_power_kw);

            let mut values: TagValues = [None; N_TAGS];
            for (slot, x) in values.iter_mut().zip(v) {
                let missing = cfg.missing_rate > 0.0 && rng.random::<f64>() < cfg.missing_rate;
                *slot = (!missing).then(|| round3(x));
            }
            records.push(ScadaRecord { timestamp: t, values });
        }
    }

    let taxonomy = cfg.taxonomy()?;
    let events: Vec<FaultEvent> = cfg
        .faults
        .iter()
        .map(|f| FaultEvent {
            class_id: f.class_id,
            t_start: f.start,
            t_end: f.end,
        })
        .collect();
    let datasheet = cfg.datasheet();

    let mut scada = Vec::new();
    write_scada_csv(&records, &mut scada)?;
    let mut logbook = Vec::new();
    write_logbook(&events, &taxonomy, &mut logbook)?;
    let mut tax = Vec::new();
    write_taxonomy(&taxonomy, &mut tax)?;
    let datasheet_json = serde_json::to_string_pretty(&datasheet)? + "\n";
    let utf8 = |b: Vec<u8>| String::from_utf8(b).expect("csv writer emits UTF-8");

    Ok(SynthOutput {
        records,
        events,
        taxonomy,
        datasheet,
        scada_csv: utf8(scada),
        logbook_csv: utf8(logbook),
        taxonomy_csv: utf8(tax),
        datasheet_json,
    })
}

/// Writes the four plant files into `dir` (created if needed).
pub fn write_to_dir(out: &SynthOutput, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = [
        (SCADA_FILE, &out.scada_csv),
        (LOGBOOK_FILE, &out.logbook_csv),
        (TAXONOMY_FILE, &out.taxonomy_csv),
        (DATASHEET_FILE, &out.datasheet_json),
    ];
    let mut written = Vec::with_capacity(files.len());
    for (name, body) in files {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scada_data::{label_dataset, read_logbook, read_scada_csv};

    fn small() -> SynthConfig {
        SynthConfig {
            n_days: 20,
            ..Default::default()
        }
    }

    fn ts(s: &str) -> DateTime<Utc> {
        crate::scada_data::parse_timestamp(s).unwrap()
    }

    #[test]
    fn no_faults_means_empty_logbook_and_normal_labels() {
        let out = generate(&small()).unwrap();
        assert_eq!(out.records.len(), 20 * 288);
        let lb = read_logbook(out.logbook_csv.as_bytes(), &out.taxonomy).unwrap();
        assert!(lb.events.is_empty());
        let ds = label_dataset(out.records.clone(), &lb.events, &out.taxonomy).unwrap();
        assert!(ds.labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn physical_consistency_and_roundtrip() {
        let cfg = small();
        let out = generate(&cfg).unwrap();
        for r in &out.records {
            assert!(r.get(Tag::PAc).unwrap() <= cfg.max_active_power_kw);
            assert!(r.get(Tag::Gti).unwrap() >= 0.0);
            if r.timestamp.hour() < 5 {
                for tag in Tag::ALL.into_iter().filter(|t| t.is_periodic()) {
                    assert_eq!(r.get(tag), Some(0.0));
                }
            }
        }
        assert_eq!(read_scada_csv(out.scada_csv.as_bytes()).unwrap(), out.records);
        assert_eq!(InverterDatasheet::from_json(&out.datasheet_json).unwrap(), out.datasheet);
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.scada_csv, b.scada_csv);
        let c = generate(&SynthConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(a.scada_csv, c.scada_csv);
    }

    #[test]
    fn lead_drift_lowers_current() {
        let mut cfg = small();
        cfg.faults.push(FaultScenario {
            class_id: 2,
            start: ts("2015-01-15T00:00:00Z"),
            end: ts("2015-01-16T23:55:00Z"),
            lead_days: 10.0,
            signature: vec![Drift { tag: Tag::IDc, kind: DriftKind::Multiplicative, amount: -0.3 }],
        });
        let faulty = generate(&cfg).unwrap();
        let clean = generate(&small()).unwrap();
        let day_mean = |recs: &[ScadaRecord], day: usize| {
            let s = &recs[day * 288..(day + 1) * 288];
            s.iter().map(|r| r.get(Tag::IDc).unwrap()).sum::<f64>() / 288.0
        };
        // last lead day: drift at 90-100 % strength
        let ratio = day_mean(&faulty.records, 13) / day_mean(&clean.records, 13);
        assert!(ratio < 0.75 && ratio > 0.69, "ratio {ratio}");
        assert_eq!(day_mean(&faulty.records, 2), day_mean(&clean.records, 2));
    }

    #[test]
    fn overlapping_same_class_is_config_error() {
        let mut cfg = small();
        let ev = FaultScenario {
            class_id: 1,
            start: ts("2015-01-05T00:00:00Z"),
            end: ts("2015-01-06T00:00:00Z"),
            lead_days: 0.0,
            signature: vec![],
        };
        cfg.faults = vec![ev.clone(), FaultScenario { start: ts("2015-01-05T12:00:00Z"), ..ev.clone() }];
        assert!(matches!(generate(&cfg), Err(Error::Config(_))));
        cfg.faults[1].class_id = 2;
        assert!(generate(&cfg).is_ok());
    }
}
