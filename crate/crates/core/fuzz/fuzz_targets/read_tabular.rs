#![no_main]
use dpfl::data::{read_tabular, TabularSchema};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let schema = TabularSchema {
        client_column: "client".into(),
        target_column: "y".into(),
        feature_columns: vec!["x1".into(), "x2".into()],
        group_column: Some("g".into()),
        scale_features: data.first().is_some_and(|b| b & 1 == 1),
    };
    if let Ok(clients) = read_tabular(data, &schema) {
        for c in &clients {
            assert_eq!(c.features.nrows(), c.targets.len());
            assert_eq!(c.features.ncols(), 2);
            assert!(c.features.iter().chain(&c.targets).all(|v| v.is_finite()));
        }
    }
});
