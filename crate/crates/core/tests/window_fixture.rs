use munidex_core::forecaster::{build_windows, risk_adjusted_target, WindowConfig, VOLATILITY_FLOOR};
use munidex_core::{AreaCode, Panel, PanelKind};

// Yearly return, taxable income growth, net migration ratio, new dwellings ratio
// for 2013..=2017 of one municipality.
const BLOCK: [[f64; 4]; 5] = [
    [0.625, 0.055, 0.025, 0.028],
    [0.388, 0.082, 0.032, 0.071],
    [0.430, 0.082, 0.033, 0.024],
    [0.422, 0.076, 0.024, 0.045],
    [-0.002, 0.108, 0.024, 0.018],
];

const INDEX_2017_2021: [f64; 5] = [100.0, 104.0, 103.0, 110.0, 115.0];

fn area() -> AreaCode {
    AreaCode::new(13103).unwrap()
}

#[test]
fn five_year_block_predicts_four_years_ahead() {
    let names = [
        "annual_return",
        "taxable_income_growth",
        "net_migration_ratio",
        "new_dwellings_ratio",
    ];
    let features: Vec<Panel> = names
        .iter()
        .enumerate()
        .map(|(k, n)| {
            Panel::from_triples(
                n,
                PanelKind::Growth,
                (0..5).map(|r| (area(), 2013 + r, BLOCK[r as usize][k])),
            )
            .unwrap()
        })
        .collect();
    let index = Panel::from_triples(
        "price_index",
        PanelKind::Level,
        INDEX_2017_2021
            .iter()
            .enumerate()
            .map(|(i, v)| (area(), 2017 + i as i32, *v)),
    )
    .unwrap();
    let targets = risk_adjusted_target(&index, 4, VOLATILITY_FLOOR).unwrap();
    let population = Panel::from_triples("population", PanelKind::Level, [(area(), 2017, 260_000.0)]).unwrap();
    let cfg = WindowConfig {
        neighbors: 0,
        neighbor_features: vec![],
        ..WindowConfig::default()
    };
    let ds = build_windows(&features, &targets.panel, &population, &[], &cfg).unwrap();

    assert_eq!(ds.samples.len(), 1);
    let s = &ds.samples[0];
    assert_eq!(s.anchor, 2017);
    for (r, row) in BLOCK.iter().enumerate() {
        assert_eq!(s.row(r, 4), row);
    }

    // (2017, 2021]: cumulative return over the sample sd of the four annual returns.
    let rets: Vec<f64> = INDEX_2017_2021.windows(2).map(|w| w[1] / w[0] - 1.0).collect();
    let mean = rets.iter().sum::<f64>() / 4.0;
    let sd = (rets.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / 3.0).sqrt();
    let expected = (115.0 / 100.0 - 1.0) / sd;
    assert!(
        (s.raw_target - expected).abs() < 1e-12,
        "{} vs {expected}",
        s.raw_target
    );
    assert!((s.weight - (1.0 + 260_000f64.log10())).abs() < 1e-12);
}
