//! Writes the vendored variant snapshot used by the test suite.
//!
//! Usage: `cargo run --release -p varcast-core --example make_snapshot -- <out.csv.gz>`
//!
//! The series are synthetic: each variant is a sequence of epidemic waves
//! whose timing and size vary by country, with multiplicative noise. The
//! schema, the 21 variant labels, the 30 countries and the week range follow
//! the ECDC weekly variant feed.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use flate2::write::GzEncoder;
use flate2::Compression;
use varcast_core::ingest::YearWeek;
use varcast_core::ndcore::{derive_seed, Rng};

const COUNTRIES: [(&str, &str, f64); 30] = [
    ("Austria", "AT", 9.0),
    ("Belgium", "BE", 11.6),
    ("Bulgaria", "BG", 6.9),
    ("Croatia", "HR", 4.0),
    ("Cyprus", "CY", 0.9),
    ("Czechia", "CZ", 10.7),
    ("Denmark", "DK", 5.8),
    ("Estonia", "EE", 1.3),
    ("Finland", "FI", 5.5),
    ("France", "FR", 67.7),
    ("Germany", "DE", 83.2),
    ("Greece", "GR", 10.7),
    ("Hungary", "HU", 9.7),
    ("Iceland", "IS", 0.37),
    ("Ireland", "IE", 5.0),
    ("Italy", "IT", 59.1),
    ("Latvia", "LV", 1.9),
    ("Liechtenstein", "LI", 0.04),
    ("Lithuania", "LT", 2.8),
    ("Luxembourg", "LU", 0.64),
    ("Malta", "MT", 0.52),
    ("Netherlands", "NL", 17.5),
    ("Norway", "NO", 5.4),
    ("Poland", "PL", 37.8),
    ("Portugal", "PT", 10.3),
    ("Romania", "RO", 19.0),
    ("Slovakia", "SK", 5.4),
    ("Slovenia", "SI", 2.1),
    ("Spain", "ES", 47.4),
    ("Sweden", "SE", 10.4),
];

/// Variant label, then waves as (centre week index, width in weeks, peak per million).
const VARIANTS: [(&str, &[(f64, f64, f64)]); 21] = [
    ("B.1.1.7", &[(40.0, 9.0, 60.0)]),
    ("B.1.351", &[(42.0, 7.0, 2.0)]),
    ("B.1.427/B.1.429", &[(44.0, 5.0, 0.15)]),
    ("B.1.525", &[(47.0, 6.0, 0.6)]),
    ("B.1.616", &[]),
    ("B.1.617.1", &[(52.0, 4.0, 0.3)]),
    ("B.1.617.2", &[(62.0, 10.0, 70.0), (78.0, 6.0, 40.0)]),
    ("B.1.620", &[(48.0, 5.0, 0.25)]),
    ("B.1.621", &[(56.0, 5.0, 0.3)]),
    ("BA.1", &[(83.0, 5.0, 160.0)]),
    ("BA.2", &[(92.0, 6.0, 140.0)]),
    ("BA.2.75", &[(136.0, 6.0, 8.0)]),
    ("BA.4", &[(105.0, 5.0, 12.0)]),
    ("BA.5", &[(110.0, 8.0, 90.0), (130.0, 6.0, 25.0)]),
    ("BQ.1", &[(142.0, 5.0, 35.0)]),
    ("C.37", &[(54.0, 4.0, 0.1)]),
    ("Other", &[(12.0, 14.0, 6.0), (30.0, 8.0, 9.0), (100.0, 30.0, 2.0)]),
    ("P.1", &[(48.0, 7.0, 1.2)]),
    ("P.3", &[(45.0, 3.0, 0.05)]),
    ("UNK", &[(25.0, 20.0, 1.5), (85.0, 10.0, 3.0)]),
    ("XBB", &[(146.0, 4.0, 6.0)]),
];

const FIRST_WEEK: YearWeek = YearWeek { year: 2020, week: 6 };
const LAST_WEEK: YearWeek = YearWeek { year: 2022, week: 49 };
const MASTER_SEED: u64 = 20221209;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out: PathBuf = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("crates/core/tests/fixtures/ecdc_variants_snapshot.csv.gz"));
    let weeks = FIRST_WEEK.range_inclusive(LAST_WEEK)?;

    let file = File::create(&out)?;
    let mut gz = GzEncoder::new(BufWriter::new(file), Compression::best());
    {
        let mut w = csv::Writer::from_writer(&mut gz);
        w.write_record([
            "country",
            "country_code",
            "year_week",
            "source",
            "new_cases",
            "number_sequenced",
            "valid_denominator",
            "variant",
            "number_detections_variant",
        ])?;
        for (ci, (country, code, pop)) in COUNTRIES.iter().enumerate() {
            let mut country_rng = Rng::new(derive_seed(MASTER_SEED, &["country", country]));
            let lag = country_rng.uniform(-4.0, 4.0);
            let reach = country_rng.uniform(0.3, 1.6);
            for (t, week) in weeks.iter().enumerate() {
                let mut rng = Rng::new(derive_seed(MASTER_SEED, &[country, &week.to_string()]));
                let mut counts = Vec::with_capacity(VARIANTS.len());
                for (variant, waves) in VARIANTS.iter() {
                    let mut level = 0.0;
                    for &(centre, width, peak) in waves.iter() {
                        let z = (t as f64 - centre - lag) / width;
                        level += peak * pop * reach * (-0.5 * z * z).exp();
                    }
                    let noisy = level * (0.35 * rng.normal()).exp();
                    let n = if level < 1e-3 { 0 } else { noisy.round() as u64 };
                    counts.push((*variant, n));
                }
                let sequenced: u64 = counts.iter().map(|c| c.1).sum();
                let new_cases = sequenced * 20 + (pop * 100.0) as u64;
                for (variant, n) in &counts {
                    // The feed leaves out some zero weeks for long-gone variants.
                    if *n == 0 && *variant != "B.1.616" && rng.uniform(0.0, 1.0) < 0.15 {
                        continue;
                    }
                    let row = [
                        country.to_string(),
                        code.to_string(),
                        week.to_string(),
                        "GISAID".to_string(),
                        new_cases.to_string(),
                        sequenced.to_string(),
                        "Yes".to_string(),
                        variant.to_string(),
                        n.to_string(),
                    ];
                    w.write_record(&row)?;
                }
                // A few countries also report through TESSy.
                if ci % 7 == 0 && t % 3 == 0 {
                    for (variant, n) in counts.iter().filter(|c| c.1 > 0) {
                        let tessy = (*n as f64 * 0.6) as u64;
                        w.write_record([
                            country.to_string(),
                            code.to_string(),
                            week.to_string(),
                            "TESSy".to_string(),
                            new_cases.to_string(),
                            String::new(),
                            "No".to_string(),
                            variant.to_string(),
                            tessy.to_string(),
                        ])?;
                    }
                }
            }
        }
        w.flush()?;
    }
    gz.finish()?.flush()?;
    eprintln!("wrote {} ({} weeks)", out.display(), weeks.len());
    Ok(())
}
