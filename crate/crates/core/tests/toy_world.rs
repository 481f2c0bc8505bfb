use plugblend_core::eval::{equal_pair_configs, fidelity_sweep, ppl_grid, shuffled_baseline};
use plugblend_core::{decode_line, toy, ControlCode, ControlConfig, GenerationParams};

fn code(s: &str) -> ControlCode {
    ControlCode::new(s).unwrap()
}

#[test]
fn sweep_walks_from_business_to_sports() {
    let world = toy::agnews();
    let providers = world.providers();
    let r = fidelity_sweep(
        "recently he saw the game .",
        &code("Sports"),
        &code("Business"),
        2.0,
        &providers,
        &world.classifier(),
        &GenerationParams::default(),
    )
    .unwrap();
    let texts: Vec<&str> = r.steps.iter().map(|s| s.text.as_str()).collect();
    assert_eq!(
        texts[0],
        "he saw the market with a company near his house and some car ."
    );
    assert_eq!(
        texts[4],
        "he saw the game with a team near his coach and some car ."
    );
    assert_eq!(r.tau_a, 1.0);
}

#[test]
fn every_ordered_pair_is_steerable_at_2x() {
    let world = toy::agnews();
    let providers = world.providers();
    let clf = world.classifier();
    let codes = providers.guide().codes().to_vec();
    let mut taus = Vec::new();
    for prompt in toy::prompts() {
        for a in &codes {
            for b in codes.iter().filter(|b| *b != a) {
                let r = fidelity_sweep(
                    &prompt,
                    a,
                    b,
                    2.0,
                    &providers,
                    &clf,
                    &GenerationParams::default(),
                )
                .unwrap();
                taus.push(r.tau_a);
            }
        }
    }
    let mean = taus.iter().sum::<f64>() / taus.len() as f64;
    assert!(mean >= 0.8, "mean tau-a {mean}");
}

#[test]
fn zero_strength_sweep_is_all_ties() {
    let world = toy::agnews();
    let r = fidelity_sweep(
        "he found the data .",
        &code("World"),
        &code("Science"),
        0.0,
        &world.providers(),
        &world.classifier(),
        &GenerationParams::default(),
    )
    .unwrap();
    assert!(r.steps.windows(2).all(|w| w[0].text == w[1].text));
    assert_eq!(r.tau_a, 0.0);
}

#[test]
fn sweep_rejects_identical_codes() {
    let world = toy::agnews();
    assert!(fidelity_sweep(
        "x",
        &code("Sports"),
        &code("Sports"),
        1.0,
        &world.providers(),
        &world.classifier(),
        &GenerationParams::default(),
    )
    .is_err());
}

#[test]
fn perplexity_rises_with_strength() {
    let world = toy::agnews();
    let providers = world.providers();
    let grid = [0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0];
    let rows = ppl_grid(
        &toy::prompts(),
        &equal_pair_configs(providers.guide().codes()),
        &grid,
        &providers,
        &GenerationParams::default(),
    )
    .unwrap();
    let means: Vec<f64> = rows.iter().map(|r| r.mean_ppl).collect();
    assert!(means.windows(2).all(|w| w[0] <= w[1]), "{means:?}");
    assert!(means[6] > means[0]);
}

#[test]
fn strength_zero_equals_uncontrolled() {
    let world = toy::agnews();
    let providers = world.providers();
    let prompt = world.base.vocabulary().tokenize("yesterday");
    let params = GenerationParams::default();
    let zero = ControlConfig::new(vec![(code("Sports"), 1.0), (code("World"), 1.0)], 0.0).unwrap();
    assert_eq!(
        decode_line(&providers, &zero, &prompt, &params).unwrap(),
        decode_line(&providers, &ControlConfig::uncontrolled(), &prompt, &params).unwrap()
    );
}

#[test]
fn shuffled_toy_stories_are_uncorrelated() {
    let world = toy::agnews();
    let stories = toy::random_stories(200, 5, 11);
    let a = shuffled_baseline(&stories, "Sports", "Business", &world.classifier(), 3).unwrap();
    let b = shuffled_baseline(&stories, "Sports", "Business", &world.classifier(), 3).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());
    assert!(a.abs() < 0.1, "{a}");
    let same = vec![vec!["he saw the game .".to_string(); 4]; 3];
    assert_eq!(
        shuffled_baseline(&same, "Sports", "Business", &world.classifier(), 0).unwrap(),
        0.0
    );
    assert!(shuffled_baseline(
        &[vec!["one".into()]],
        "Sports",
        "Business",
        &world.classifier(),
        0
    )
    .is_err());
}
