use rulfuse::numkit::SeededRng;

const GOLDEN: &str = include_str!("data/rng_seed42.txt");

#[test]
fn seed_42_stream_matches_golden_file() {
    let expected: Vec<u64> = GOLDEN
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| l.trim().parse().unwrap())
        .collect();
    assert_eq!(expected.len(), 16);
    let mut rng = SeededRng::new(42);
    let got: Vec<u64> = (0..16).map(|_| rng.next_u64()).collect();
    assert_eq!(got, expected);
}
