use phrasedet_backends::wire::{parse_record, quantize, to_canonical, DetectorResponse, RecordKind, SCHEMA_VERSION};
use proptest::prelude::*;

fn response() -> impl Strategy<Value = DetectorResponse> {
    (prop::collection::vec(1usize..4, 1..4), 0usize..6).prop_flat_map(|(counts, n)| {
        let row = counts
            .iter()
            .map(|&m| prop::collection::vec(0.0..=1.0f64, m))
            .collect::<Vec<_>>();
        let boxes = prop::collection::vec((0.0..500.0f64, 0.0..500.0f64, 0.5..300.0f64, 0.5..300.0f64), n);
        (Just(counts), boxes, prop::collection::vec(row, n)).prop_map(|(counts, boxes, scores)| DetectorResponse {
            schema_version: SCHEMA_VERSION,
            image_id: 42,
            prompt_set_fingerprint: "ab".repeat(32),
            phrase_counts: counts,
            boxes: boxes
                .into_iter()
                .map(|(x, y, w, h)| [x, y, x + w, y + h].map(|v| quantize(v, 2)))
                .collect(),
            scores,
        })
    })
}

proptest! {
    #[test]
    fn parse_then_write_is_byte_identical(r in response()) {
        let first = to_canonical(&r).unwrap();
        let parsed: DetectorResponse = parse_record(RecordKind::DetectorResponse, &first).unwrap();
        let second = to_canonical(&parsed).unwrap();
        prop_assert_eq!(&first, &second);
        // quantization error stays inside the last printed digit
        for (a, b) in r.scores.iter().flatten().flatten().zip(parsed.scores.iter().flatten().flatten()) {
            prop_assert!((a - b).abs() <= 5e-7 + 1e-12);
        }
    }
}
