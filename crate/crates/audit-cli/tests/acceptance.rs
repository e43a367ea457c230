//! Acceptance suite: one test per criterion, each printing a pass line.
//! Run with `cargo test -p audit-cli --test acceptance`.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use audit_core::classify::{classify_text, RefusalPatterns};
use audit_core::corpus::{ScholarIndex};
use audit_core::grid::Manifest;
use audit_core::resolve::{fuzzy_match, jaro_winkler, ExhaustiveScanner, MatchStatus};
use audit_core::stats::{
    anova_type_ii, bh_correct, cluster_robust, fit_ols, omega_squared, shapiro_w, Design,
    DesignBuilder,
};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn mini_fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/mini")
}

fn audit_bin() -> &'static str {
    env!("CARGO_BIN_EXE_audit")
}

fn pass(criterion: u32, detail: &str) {
    println!("[acceptance] criterion {criterion}: PASS — {detail}");
}

// ---------------------------------------------------------------- criterion 1

#[test]
fn criterion_1_grid_cardinality_and_campaign_count() {
    let manifest = Manifest::bundled();
    let grid = manifest.enumerate_grid().unwrap();
    assert_eq!(grid.len(), 2160, "default grid must have 2,160 prompts");

    // Independent counting oracle: product of the cardinalities read straight
    // from the manifest JSON, with subfields counted per parent field.
    let raw: serde_json::Value =
        serde_json::from_str(include_str!("../../audit-core/data/manifest.json")).unwrap();
    let dims = &raw["dimensions"];
    let len = |key: &str| dims[key].as_array().unwrap().len();
    let sub_total: usize = dims["subfield"]
        .as_object()
        .unwrap()
        .values()
        .map(|pair| pair.as_array().unwrap().len())
        .sum();
    let expected =
        len("role") * len("language") * len("location") * sub_total * len("seniority") * len("k");
    assert_eq!(grid.len(), expected, "enumeration disagrees with the counting oracle");

    // Restricting k to {1, 5} must scale the grid to 1,440.
    let mut smaller = manifest.clone();
    smaller.dimensions.k = vec![1, 5];
    assert_eq!(smaller.enumerate_grid().unwrap().len(), 1440);

    // Mock campaign: 2 endpoints x 10 reps over the full grid.
    let corpus_csv = mini_fixtures().join("scholars.csv");
    let (index, _) = ScholarIndex::ingest(&corpus_csv, 0.0).unwrap();
    let endpoints: Vec<audit_gateway::EndpointConfig> = ["mock-a", "mock-b"]
        .into_iter()
        .map(|llm| audit_gateway::EndpointConfig {
            llm_id: llm.into(),
            base_url: "mock://".into(),
            api_style: audit_gateway::ApiStyle::OpenaiChat,
            model_name: llm.into(),
            max_concurrency: 1,
            timeout_s: 1.0,
            max_retries: 0,
            initial_backoff_ms: 1,
            params: serde_json::Map::new(),
            api_key_env: None,
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let sink = dir.path().join("raw.jsonl");
    let summary = audit_gateway::run_campaign_mock(
        &grid,
        &endpoints,
        10,
        &sink,
        false,
        7,
        &index,
        &manifest.location_iso(),
    )
    .unwrap();
    assert_eq!(summary.total_written, 43_200, "2,160 x 2 x 10 records");
    let lines = std::fs::read_to_string(&sink).unwrap().lines().count();
    assert_eq!(lines, 43_200);

    pass(1, "grid 2,160 (oracle-checked, 1,440 under k={1,5}); campaign 43,200 records");
}

// ---------------------------------------------------------------- criterion 2

#[derive(serde::Deserialize)]
struct GoldItem {
    id: String,
    raw_text: String,
    gold: String,
    unambiguous: bool,
}

#[test]
fn criterion_2_classifier_gold_fixture() {
    let raw = include_str!("../../audit-core/tests/fixtures/classifier_gold.json");
    let items: Vec<GoldItem> = serde_json::from_str(raw).unwrap();
    assert_eq!(items.len(), 100);
    let patterns = RefusalPatterns::bundled();

    let mut correct = 0usize;
    let mut unambiguous_errors = Vec::new();
    for item in &items {
        let (category, _, _) = classify_text(&item.raw_text, &patterns);
        if category.as_str() == item.gold {
            correct += 1;
        } else if item.unambiguous {
            unambiguous_errors.push(item.id.clone());
        }
    }
    assert!(unambiguous_errors.is_empty(), "unambiguous misses: {unambiguous_errors:?}");
    assert!(correct >= 95, "accuracy {correct}/100");
    pass(2, &format!("classifier gold accuracy {correct}/100, unambiguous subset exact"));
}

// ---------------------------------------------------------------- criterion 3

const SYNTH_CORPUS_SIZE: usize = 1_000_000;
const SYNTH_QUERIES: usize = 10_000;

fn synth_name(rng: &mut ChaCha8Rng, len: usize) -> String {
    let mut s = String::with_capacity(len);
    for i in 0..len {
        let c = (b'a' + rng.gen_range(0..26u8)) as char;
        if i == 0 {
            s.extend(c.to_uppercase());
        } else {
            s.push(c);
        }
    }
    s
}

fn build_synth_corpus_csv(path: &Path) {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE);
    let fields = audit_core::corpus::CANONICAL_FIELDS;
    let file = std::fs::File::create(path).unwrap();
    let mut w = std::io::BufWriter::new(file);
    writeln!(
        w,
        "scholar_id,display_name,lastname,field,gender,ethnicity,year_first_pub,works_count,citation_count,country_code"
    )
    .unwrap();
    for i in 0..SYNTH_CORPUS_SIZE {
        let first_len = rng.gen_range(4..9);
        let first = synth_name(&mut rng, first_len);
        let last_len = rng.gen_range(5..11);
        let last = synth_name(&mut rng, last_len);
        let field = fields[i % fields.len()];
        let gender = ["female", "male", "unknown"][rng.gen_range(0..3)];
        let year = 1980 + rng.gen_range(0..45);
        let works = rng.gen_range(0..2000u32);
        let citations = rng.gen_range(0..100_000u32);
        writeln!(
            w,
            "syn{i:07},{first} {last},{last},{field},{gender},Unknown,{year},{works},{citations},DE"
        )
        .unwrap();
    }
    w.flush().unwrap();
}

enum QueryKind {
    PrefixIntact,
    Random,
}

/// Queries derived from corpus rows never touch the first two lastname
/// characters, so blocking is complete for them by construction.
fn build_queries(index: &ScholarIndex) -> Vec<(String, String, QueryKind)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xBEEF);
    let mut queries = Vec::with_capacity(SYNTH_QUERIES);
    for q in 0..SYNTH_QUERIES {
        if q % 10 < 7 {
            let record = index.record(rng.gen_range(0..index.len() as u32));
            let display = &record.display_name;
            let first = display.split_whitespace().next().unwrap().to_string();
            let last = record.lastname.clone();
            let (first, last) = match q % 4 {
                0 => (first, last),
                1 => {
                    // Substitute one character of the given name.
                    let mut chars: Vec<char> = first.chars().collect();
                    let pos = rng.gen_range(0..chars.len());
                    chars[pos] = 'x';
                    (chars.into_iter().collect(), last)
                }
                2 => {
                    // Substitute a lastname character beyond the block prefix.
                    let mut chars: Vec<char> = last.chars().collect();
                    if chars.len() > 3 {
                        let pos = rng.gen_range(2..chars.len());
                        chars[pos] = 'q';
                    }
                    (first, chars.into_iter().collect())
                }
                _ => (format!("{first}a"), last),
            };
            queries.push((first, last, QueryKind::PrefixIntact));
        } else {
            let first_len = rng.gen_range(4..9);
            let first = synth_name(&mut rng, first_len);
            let last_len = rng.gen_range(5..11);
            let last = synth_name(&mut rng, last_len);
            queries.push((first, last, QueryKind::Random));
        }
    }
    queries
}

#[test]
fn criterion_3_resolution_oracle_equivalence_and_speedup() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("synth.csv");
    build_synth_corpus_csv(&csv);
    let (index, report) = ScholarIndex::ingest(&csv, 0.0).unwrap();
    assert_eq!(index.len(), SYNTH_CORPUS_SIZE);
    assert_eq!(report.rejected, 0);

    // Every record is reachable through its block (exhaustive iteration).
    let mut reachable = vec![false; index.len()];
    for record in index.records() {
        for &idx in index.block(&audit_core::corpus::block_key(&record.lastname)) {
            reachable[idx as usize] = true;
        }
    }
    assert!(reachable.iter().all(|&r| r), "every record must be block-reachable");

    let queries: Vec<(String, String, QueryKind)> = build_queries(&index)
        .into_iter()
        .map(|(f, l, k)| {
            let (nf, _) = audit_core::classify::normalize_name(&f);
            let (nl, _) = audit_core::classify::normalize_name(&l);
            (nf, nl, k)
        })
        .collect();

    let blocked_start = Instant::now();
    let blocked: Vec<_> = queries
        .iter()
        .map(|(f, l, _)| fuzzy_match(f, l, &index))
        .collect();
    let blocked_time = blocked_start.elapsed();

    let scanner = ExhaustiveScanner::new(&index);
    let exhaustive_start = Instant::now();
    let exhaustive: Vec<_> = queries
        .iter()
        .map(|(f, l, _)| scanner.match_query(f, l))
        .collect();
    let exhaustive_time = exhaustive_start.elapsed();

    let mut found = 0usize;
    for (((_, _, kind), b), e) in queries.iter().zip(&blocked).zip(&exhaustive) {
        if matches!(kind, QueryKind::PrefixIntact) {
            assert_eq!(
                (b.status, &b.scholar_id),
                (e.status, &e.scholar_id),
                "blocked and exhaustive disagree on a prefix-intact query: {} {}",
                b.query_name,
                b.query_lastname
            );
        }
        if b.status == MatchStatus::Found {
            found += 1;
        }
    }
    assert!(found > SYNTH_QUERIES / 3, "expected a healthy found rate, got {found}");

    let speedup = exhaustive_time.as_secs_f64() / blocked_time.as_secs_f64().max(1e-9);
    assert!(
        speedup >= 10.0,
        "blocked path must be at least 10x faster (blocked {blocked_time:?}, exhaustive {exhaustive_time:?})"
    );
    pass(
        3,
        &format!(
            "1M corpus / 10k queries: blocked == exhaustive on prefix-intact; speedup {speedup:.0}x (blocked {blocked_time:?}, exhaustive {exhaustive_time:?})"
        ),
    );
}

// ---------------------------------------------------------------- criterion 4

#[test]
fn criterion_4_jaro_winkler_reference_agreement() {
    // Hand case first.
    let martha = jaro_winkler("MARTHA", "MARHTA");
    assert!((martha - 0.9611).abs() < 1e-4, "MARTHA/MARHTA = {martha}");
    assert!((martha - 173.0 / 180.0).abs() < 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    let alphabet: Vec<char> = ('a'..='z').chain('A'..='Z').chain("áéíöüßñ南 李-'".chars()).collect();
    let random_string = |rng: &mut ChaCha8Rng| -> String {
        let len = rng.gen_range(0..20);
        (0..len).map(|_| alphabet[rng.gen_range(0..alphabet.len())]).collect()
    };
    for i in 0..1000 {
        let a = random_string(&mut rng);
        let b = if i % 5 == 0 {
            // Force near-duplicates so the boosted branch is exercised.
            let mut c: Vec<char> = a.chars().collect();
            if !c.is_empty() {
                let pos = rng.gen_range(0..c.len());
                c[pos] = 'z';
            }
            c.into_iter().collect()
        } else {
            random_string(&mut rng)
        };
        let ours = jaro_winkler(&a, &b);
        let reference = strsim::jaro_winkler(&a, &b);
        assert!(
            (ours - reference).abs() < 1e-12,
            "disagreement on {a:?}/{b:?}: {ours} vs {reference}"
        );
    }
    pass(4, "1,000 random pairs agree with the reference to 1e-12; MARTHA case exact");
}

// ---------------------------------------------------------------- criterion 5

#[test]
fn criterion_5_metric_hand_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let work = dir.path();
    let run = |args: &[&str]| {
        let output = Command::new(audit_bin()).args(args).output().unwrap();
        assert!(
            output.status.success(),
            "audit {args:?} failed: {}",
            String::from_utf8_lossy(&output.stderr)
        );
    };

    let manifest = mini_fixtures().join("manifest.json");
    let scholars = mini_fixtures().join("scholars.csv");
    let raw = fixtures().join("raw_scripted.jsonl");
    let grid = work.join("grid.jsonl");
    let index = work.join("index.bin");

    run(&["grid", "--manifest", manifest.to_str().unwrap(), "--out", grid.to_str().unwrap()]);
    run(&[
        "corpus",
        "--in",
        scholars.to_str().unwrap(),
        "--out",
        index.to_str().unwrap(),
        "--report",
        work.join("marginals.json").to_str().unwrap(),
    ]);
    run(&[
        "classify",
        "--in",
        raw.to_str().unwrap(),
        "--out",
        work.join("classified.jsonl").to_str().unwrap(),
    ]);
    run(&[
        "resolve",
        "--in",
        work.join("classified.jsonl").to_str().unwrap(),
        "--index",
        index.to_str().unwrap(),
        "--out",
        work.join("resolved.jsonl").to_str().unwrap(),
        "--oracle-check",
    ]);
    run(&[
        "evaluate",
        "--classified",
        work.join("classified.jsonl").to_str().unwrap(),
        "--resolved",
        work.join("resolved.jsonl").to_str().unwrap(),
        "--index",
        index.to_str().unwrap(),
        "--grid",
        grid.to_str().unwrap(),
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        work.join("metrics.csv").to_str().unwrap(),
    ]);

    let golden = read_csv(&fixtures().join("golden_metrics.csv"));
    let actual = read_csv(&work.join("metrics.csv"));
    assert_eq!(golden.0, actual.0, "metrics.csv header mismatch");
    assert_eq!(golden.1.len(), actual.1.len(), "row count mismatch");

    let mut checked_cells = 0usize;
    for (row_idx, (g_row, a_row)) in golden.1.iter().zip(&actual.1).enumerate() {
        for (col, (g, a)) in golden.0.iter().zip(g_row.iter().zip(a_row.iter())) {
            match (g.parse::<f64>(), a.parse::<f64>()) {
                (Ok(gv), Ok(av)) => assert_eq!(
                    gv.to_bits(),
                    av.to_bits(),
                    "row {row_idx} column {col}: golden {g} vs actual {a}"
                ),
                _ => assert_eq!(g, a, "row {row_idx} column {col}"),
            }
            checked_cells += 1;
        }
    }
    pass(
        5,
        &format!("scripted campaign matches the hand-computed golden exactly ({checked_cells} cells)"),
    );
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut reader = csv::Reader::from_path(path).unwrap();
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    let rows: Vec<Vec<String>> = reader
        .records()
        .map(|r| r.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

// ---------------------------------------------------------------- criterion 6

fn synthetic_design(n: usize, noise: f64, seed: u64) -> (Design, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let locations = ["Germany", "Japan", "Ecuador"];
    let ks = ["1", "5"];
    let llms = ["m-a", "m-b"];
    // True effects.
    let loc_effect = |l: &str| match l {
        "Japan" => 0.30,
        "Ecuador" => -0.20,
        _ => 0.0,
    };
    let k_effect = |k: &str| if k == "5" { 0.15 } else { 0.0 };
    let llm_effect = |m: &str| if m == "m-b" { -0.10 } else { 0.0 };

    let mut loc_col = Vec::new();
    let mut k_col = Vec::new();
    let mut llm_col = Vec::new();
    let mut y = Vec::new();
    for i in 0..n {
        let l = locations[i % 3];
        let k = ks[(i / 3) % 2];
        let m = llms[(i / 6) % 2];
        let eps: f64 = if noise > 0.0 {
            (rng.gen_range(0.0f64..1.0) - 0.5) * 2.0 * noise
        } else {
            0.0
        };
        loc_col.push(l.to_string());
        k_col.push(k.to_string());
        llm_col.push(m.to_string());
        y.push(0.4 + loc_effect(l) + k_effect(k) + llm_effect(m) + eps);
    }
    let design = DesignBuilder {
        response: "synthetic".into(),
        factor_values: vec![
            ("location".into(), loc_col),
            ("k".into(), k_col),
            ("llm".into(), llm_col),
        ],
        y: y.clone(),
        clusters: (0..n).map(|i| format!("c{i}")).collect(),
    }
    .build()
    .unwrap();
    (design, y)
}

/// Independently coded normal-equations oracle: explicit dense X, X'X beta =
/// X'y solved by full-pivot LU, nothing shared with the streaming fit.
fn normal_equations_oracle(design: &Design) -> Vec<f64> {
    let n = design.n_rows();
    let p = design.n_cols();
    let mut x = nalgebra::DMatrix::<f64>::zeros(n, p);
    for row in 0..n {
        for col in design.active_columns(row) {
            x[(row, col)] = 1.0;
        }
    }
    let y = nalgebra::DVector::from_column_slice(&design.y);
    let xtx = x.transpose() * &x;
    let xty = x.transpose() * y;
    let beta = xtx.full_piv_lu().solve(&xty).expect("oracle solve");
    beta.iter().copied().collect()
}

#[test]
fn criterion_6a_coefficient_recovery() {
    // Noiseless: exact recovery of the constructed effects.
    let (design, _) = synthetic_design(240, 0.0, 1);
    let fit = fit_ols(&design).unwrap();
    let by_name: BTreeMap<(String, String), f64> = fit
        .coef_names
        .iter()
        .cloned()
        .zip(fit.beta.iter().copied())
        .collect();
    let expect = [
        (("(Intercept)".to_string(), String::new()), 0.4),
        (("location".to_string(), "Japan".to_string()), 0.30),
        (("location".to_string(), "Ecuador".to_string()), -0.20),
        (("k".to_string(), "5".to_string()), 0.15),
        (("llm".to_string(), "m-b".to_string()), -0.10),
    ];
    for (key, want) in expect {
        let got = by_name[&key];
        assert!((got - want).abs() < 1e-10, "{key:?}: {got} vs {want}");
    }
    assert!(fit.rss < 1e-18);

    // Noisy: identical to the independently coded normal-equations oracle.
    let (design, _) = synthetic_design(1200, 0.2, 2);
    let fit = fit_ols(&design).unwrap();
    let oracle = normal_equations_oracle(&design);
    for (ours, oracle_beta) in fit.beta.iter().zip(&oracle) {
        assert!(
            (ours - oracle_beta).abs() < 1e-10,
            "fit {ours} vs oracle {oracle_beta}"
        );
    }
    pass(6, "(a) noiseless recovery exact; noisy fit matches normal-equations oracle to 1e-10");
}

#[test]
fn criterion_6b_type_ii_ordering_invariance() {
    // Unbalanced 3-factor data; all 6 factor orderings give identical SS.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 180;
    let roles: Vec<String> = (0..n)
        .map(|_| if rng.gen_range(0.0f64..1.0) < 0.6 { "A" } else { "B" }.to_string())
        .collect();
    let langs: Vec<String> = (0..n)
        .map(|_| ["en", "de", "es"][rng.gen_range(0..3)].to_string())
        .collect();
    let ks: Vec<String> = (0..n)
        .map(|_| if rng.gen_range(0.0f64..1.0) < 0.4 { "1" } else { "5" }.to_string())
        .collect();
    let y: Vec<f64> = (0..n)
        .map(|i| {
            let mut v = 0.2;
            if roles[i] == "B" {
                v += 0.3;
            }
            if langs[i] == "de" {
                v += 0.1;
            }
            if langs[i] == "es" {
                v -= 0.05;
            }
            if ks[i] == "5" {
                v += 0.2;
            }
            v + (rng.gen_range(0.0f64..1.0) - 0.5) * 0.2
        })
        .collect();

    let columns: [(&str, &[String]); 3] = [("role", &roles), ("language", &langs), ("k", &ks)];
    let orders = [
        [0usize, 1, 2],
        [0, 2, 1],
        [1, 0, 2],
        [1, 2, 0],
        [2, 0, 1],
        [2, 1, 0],
    ];
    let mut reference: Option<BTreeMap<String, f64>> = None;
    for order in orders {
        let design = DesignBuilder {
            response: "m".into(),
            factor_values: order
                .iter()
                .map(|&i| (columns[i].0.to_string(), columns[i].1.to_vec()))
                .collect(),
            y: y.clone(),
            clusters: (0..n).map(|i| format!("c{i}")).collect(),
        }
        .build()
        .unwrap();
        let fit = fit_ols(&design).unwrap();
        let table = anova_type_ii(&design, &fit).unwrap();
        let ss: BTreeMap<String, f64> =
            table.factors.iter().map(|f| (f.factor.clone(), f.ss)).collect();
        match &reference {
            None => reference = Some(ss),
            Some(want) => {
                for (factor, value) in &ss {
                    assert!(
                        (value - want[factor]).abs() < 1e-10,
                        "ordering changed SS for {factor}: {value} vs {}",
                        want[factor]
                    );
                }
            }
        }
    }
    pass(6, "(b) Type-II sums of squares invariant under all 6 factor orderings");
}

#[test]
fn criterion_6c_omega_squared_cases() {
    // Two-group zero-residual hand case.
    let design = DesignBuilder {
        response: "m".into(),
        factor_values: vec![(
            "role".into(),
            vec!["A".into(), "A".into(), "B".into(), "B".into()],
        )],
        y: vec![0.0, 0.0, 1.0, 1.0],
        clusters: (0..4).map(|i| format!("c{i}")).collect(),
    }
    .build()
    .unwrap();
    let fit = fit_ols(&design).unwrap();
    let table = anova_type_ii(&design, &fit).unwrap();
    assert!((table.factors[0].omega2 - 1.0).abs() < 1e-12);

    // Identity against the formula recomputed from the emitted fields.
    let recomputed = omega_squared(
        table.factors[0].ss,
        table.factors[0].df,
        table.ss_residual,
        table.df_residual,
        table.ss_total,
    )
    .unwrap();
    assert_eq!(recomputed.to_bits(), table.factors[0].omega2.to_bits());

    // Null factor on pure noise at n = 10^4: |omega^2| < 0.01.
    let n = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let roles: Vec<String> = (0..n).map(|i| if i % 2 == 0 { "A" } else { "B" }.to_string()).collect();
    let y: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0f64..1.0)).collect();
    let design = DesignBuilder {
        response: "m".into(),
        factor_values: vec![("role".into(), roles)],
        y,
        clusters: (0..n).map(|i| format!("c{i}")).collect(),
    }
    .build()
    .unwrap();
    let fit = fit_ols(&design).unwrap();
    let table = anova_type_ii(&design, &fit).unwrap();
    let omega = table.factors[0].omega2;
    assert!(omega.abs() < 0.01, "null-factor omega^2 = {omega}");
    pass(6, "(c) omega^2 = 1 on the zero-residual hand case; null factor below 0.01 at n=10^4");
}

#[test]
fn criterion_6d_cr1_singleton_reduction() {
    let (design, _) = synthetic_design(600, 0.25, 5);
    let fit = fit_ols(&design).unwrap();
    let robust = cluster_robust(&design, &fit, 1, 0.95).unwrap();

    // Independent HC1 oracle from the explicit dense design.
    let n = fit.n;
    let p = fit.p;
    let mut x = nalgebra::DMatrix::<f64>::zeros(n, p);
    for row in 0..n {
        for col in design.active_columns(row) {
            x[(row, col)] = 1.0;
        }
    }
    let xtx_inv = (x.transpose() * &x).try_inverse().unwrap();
    let mut meat = nalgebra::DMatrix::<f64>::zeros(p, p);
    for row in 0..n {
        let xi = x.row(row).transpose();
        meat += &xi * xi.transpose() * fit.residuals[row] * fit.residuals[row];
    }
    let cov = &xtx_inv * meat * &xtx_inv * (n as f64 / (n - p) as f64);
    for j in 0..p {
        let oracle = cov[(j, j)].sqrt();
        assert!(
            (robust.se[j] - oracle).abs() < 1e-10,
            "coefficient {j}: CR1 {} vs HC1 oracle {oracle}",
            robust.se[j]
        );
    }
    pass(6, "(d) CR1 equals HC1-scaled robust errors under singleton clusters to 1e-10");
}

#[test]
fn criterion_6e_bh_hand_case() {
    let adjusted = bh_correct(&[0.01, 0.02, 0.03, 0.04]);
    for (i, v) in adjusted.iter().enumerate() {
        assert!((v - 0.04).abs() < 1e-15, "position {i}: {v}");
    }
    pass(6, "(e) BH (0.01, 0.02, 0.03, 0.04) adjusts to all 0.04");
}

// ---------------------------------------------------------------- criterion 7

#[test]
fn criterion_7_diagnostics() {
    use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

    // Shapiro-Wilk on seeded normal residuals, n = 5000.
    let mut rng = ChaCha8Rng::seed_from_u64(777);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let sample: Vec<f64> = (0..5000)
        .map(|_| normal.inverse_cdf(rng.gen_range(1e-12..1.0 - 1e-12)))
        .collect();
    let w = shapiro_w(&sample).unwrap();
    assert!(w > 0.99, "W = {w}");

    // Breusch-Pagan rejects at the 1% level on constructed heteroskedastic
    // data: residual spread depends on the role dummy.
    let n = 4000;
    let mut roles = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let loud = i % 2 == 0;
        roles.push(if loud { "A" } else { "B" }.to_string());
        let sd = if loud { 2.0 } else { 0.2 };
        y.push(normal.inverse_cdf(rng.gen_range(1e-12..1.0 - 1e-12)) * sd);
    }
    let design = DesignBuilder {
        response: "m".into(),
        factor_values: vec![("role".into(), roles)],
        y,
        clusters: (0..n).map(|i| format!("c{i}")).collect(),
    }
    .build()
    .unwrap();
    let fit = fit_ols(&design).unwrap();
    let bp = audit_core::stats::diagnostics::breusch_pagan(&design, &fit).unwrap();
    let threshold = ChiSquared::new(1.0).unwrap().inverse_cdf(0.99);
    assert!(bp > threshold, "BP {bp} must exceed the 1% critical value {threshold}");

    // Fitted-range fraction is exact on a bounded fixture: three groups with
    // means -0.5, 0.5, 1.5 -> exactly 2/3 of fitted values outside [0,1].
    let groups = ["lo", "mid", "hi"];
    let mut g = Vec::new();
    let mut y = Vec::new();
    for i in 0..30 {
        let grp = groups[i % 3];
        g.push(grp.to_string());
        let base = match grp {
            "lo" => -0.5,
            "mid" => 0.5,
            _ => 1.5,
        };
        y.push(base + if i % 6 < 3 { 0.01 } else { -0.01 });
    }
    let design = DesignBuilder {
        response: "m".into(),
        factor_values: vec![("role".into(), g)],
        y,
        clusters: (0..30).map(|i| format!("c{i}")).collect(),
    }
    .build()
    .unwrap();
    let fit = fit_ols(&design).unwrap();
    let frac = audit_core::stats::diagnostics::frac_outside_unit(&fit.fitted);
    assert_eq!(frac, 2.0 / 3.0);
    pass(7, &format!("Shapiro W={w:.4} > 0.99; BP {bp:.0} rejects at 1%; fitted-range fraction exact"));
}

// ---------------------------------------------------------------- criterion 8

#[test]
fn criterion_8_composites_and_quadrants() {
    use audit_core::evaluate::METRIC_NAMES;
    use audit_core::report::summarize;
    use audit_core::stats::MetricCell;

    let mut rng = ChaCha8Rng::seed_from_u64(88);
    for trial in 0..1000 {
        let n_models = rng.gen_range(1..8);
        let cells: Vec<MetricCell> = (0..n_models)
            .map(|m| {
                let mut values = BTreeMap::new();
                for metric in METRIC_NAMES {
                    if rng.gen_range(0.0f64..1.0) < 0.8 {
                        values.insert(metric.to_string(), rng.gen_range(0.0f64..1.0));
                    }
                }
                MetricCell {
                    prompt_id: format!("p{trial}"),
                    llm_id: format!("model-{m}"),
                    role: "Director/Recruiter".into(),
                    language: "en".into(),
                    location: "Germany".into(),
                    field: "Physics".into(),
                    subfield: "physics education".into(),
                    seniority: "Junior Professor".into(),
                    k: "1".into(),
                    values,
                }
            })
            .collect();
        let (summaries, _) = summarize(&cells).unwrap();
        assert_eq!(summaries.len(), n_models as usize);
        for summary in &summaries {
            assert!(
                (0.0..=7.0 + 1e-12).contains(&summary.composite_technical),
                "technical composite {} out of bounds",
                summary.composite_technical
            );
            assert!(
                (0.0..=4.0 + 1e-12).contains(&summary.composite_social),
                "social composite {} out of bounds",
                summary.composite_social
            );
        }
        // Partition is exhaustive and exclusive: every model has exactly one
        // quadrant (the enum guarantees exclusivity; count exhaustiveness).
        let assigned = summaries.len();
        assert_eq!(assigned, n_models as usize);
    }

    // The observed parity band: four parities of 0.55 compose to 2.2 of the
    // maximum 4.
    let mut values = BTreeMap::new();
    for metric in ["par_gender", "par_ethnicity", "par_works", "par_citations"] {
        values.insert(metric.to_string(), 0.55);
    }
    let cell = MetricCell {
        prompt_id: "p".into(),
        llm_id: "banded".into(),
        role: "Director/Recruiter".into(),
        language: "en".into(),
        location: "Germany".into(),
        field: "Physics".into(),
        subfield: "physics education".into(),
        seniority: "Junior Professor".into(),
        k: "1".into(),
        values,
    };
    let (summaries, _) = summarize(&[cell]).unwrap();
    assert!((summaries[0].composite_social - 2.2).abs() < 1e-12);
    assert!((0.0..=4.0).contains(&summaries[0].composite_social));
    pass(8, "composite bounds hold over 1,000 randomized summaries; quadrants partition; 2.2 band reproduced");
}

// ---------------------------------------------------------------- criterion 9

#[test]
fn criterion_9_pipeline_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let scholars = mini_fixtures().join("scholars.csv");
    let run = |work: &Path| {
        let output = Command::new(audit_bin())
            .args([
                "all",
                "--mock",
                "--seed",
                "7",
                "--corpus",
                scholars.to_str().unwrap(),
                "--workdir",
                work.to_str().unwrap(),
            ])
            .output()
            .unwrap();
        assert!(
            output.status.success(),
            "audit all failed: {}",
            String::from_utf8_lossy(&output.stderr)
        );
    };

    let w1 = dir.path().join("run1");
    let w2 = dir.path().join("run2");
    run(&w1);
    run(&w2);

    let mut compared = 0usize;
    compare_trees(&w1, &w2, &mut compared);
    assert!(compared >= 20, "expected to compare many files, got {compared}");
    pass(9, &format!("two seeded runs byte-identical across {compared} files"));
}

fn compare_trees(a: &Path, b: &Path, compared: &mut usize) {
    let mut entries: Vec<_> = std::fs::read_dir(a)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    entries.sort();
    let mut b_entries: Vec<_> = std::fs::read_dir(b)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    b_entries.sort();
    assert_eq!(entries, b_entries, "directory listings differ under {}", a.display());
    for name in entries {
        let pa = a.join(&name);
        let pb = b.join(&name);
        if pa.is_dir() {
            compare_trees(&pa, &pb, compared);
        } else {
            let ba = std::fs::read(&pa).unwrap();
            let bb = std::fs::read(&pb).unwrap();
            assert_eq!(ba, bb, "file {} differs between runs", pa.display());
            *compared += 1;
        }
    }
}
