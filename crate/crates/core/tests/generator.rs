mod support;

use std::sync::LazyLock;

use navsynth_core::generator::{
    dummy_instruction, placeholder_residue, pool_for_mode, spatial_terms, Generator, GeneratorConfig,
    InstructionRecord, Mode, Verifier, DUMMY_PHRASES,
};
use navsynth_core::geo::CardinalDirection;
use navsynth_core::grammar::{default_grammar, Placeholder, RelationClass, Template, TemplatePool};
use navsynth_core::mapgraph::MapBundle;
use navsynth_core::synth::{grid_city, CityConfig};
use statrs::distribution::{ChiSquared, ContinuousCDF};

static CITY: LazyLock<MapBundle> =
    LazyLock::new(|| grid_city(&CityConfig { rows: 16, cols: 16, entities: 1500, parks: 3, ..CityConfig::default() }).unwrap());
static TEMPLATES: LazyLock<Vec<Template>> = LazyLock::new(|| default_grammar().enumerate().unwrap());
static FULL_POOL: LazyLock<TemplatePool> = LazyLock::new(|| TemplatePool::new(TEMPLATES.clone()));

fn records(mode: Mode, n: u64, seed: u64) -> Vec<InstructionRecord> {
    let pool = pool_for_mode(mode, &TEMPLATES);
    let generator = Generator::new(&CITY, pool.as_ref(), GeneratorConfig::new(mode)).unwrap();
    generator.generate(n, seed).map(|r| r.unwrap()).collect()
}

#[test]
fn dummy_phrases_are_uniform() {
    let mut rng = support::rng(51);
    let mut counts = [0u64; DUMMY_PHRASES.len()];
    let draws = 31_000;
    for _ in 0..draws {
        let phrase = dummy_instruction(&mut rng);
        counts[DUMMY_PHRASES.iter().position(|p| *p == phrase).unwrap()] += 1;
    }
    let expected = draws as f64 / DUMMY_PHRASES.len() as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let critical = ChiSquared::new((DUMMY_PHRASES.len() - 1) as f64).unwrap().inverse_cdf(0.99);
    assert!(chi2 < critical, "chi2 {chi2} above {critical}");
}

#[test]
fn dummy_records_carry_no_spatial_vocabulary() {
    for phrase in DUMMY_PHRASES {
        assert!(spatial_terms(phrase).is_empty(), "{phrase}: {:?}", spatial_terms(phrase));
    }
    for r in records(Mode::Dummy, 200, 3) {
        assert!(spatial_terms(&r.instruction).is_empty(), "{}", r.instruction);
        assert!(r.template_id.is_none() && r.landmarks.is_none() && r.features.is_none());
    }
}

#[test]
fn stop_list_catches_spatial_words() {
    assert_eq!(spatial_terms("Turn left at the corner."), ["Turn", "left", "corner"]);
    assert_eq!(spatial_terms("Walk 3 blocks north-east"), ["Walk", "3", "blocks", "north-east"]);
}

#[test]
fn cfg_records_verify_and_have_no_residue() {
    let verifier = Verifier::new(&CITY, &FULL_POOL);
    for r in records(Mode::Cfg, 300, 9) {
        assert!(placeholder_residue(&r.instruction).is_empty(), "{}", r.instruction);
        let report = verifier.verify(&r).unwrap();
        assert!(report.passed, "{}: {:?}", r.instruction, report.diffs);
    }
}

#[test]
fn residue_lint_flags_a_corrupted_record() {
    let mut r = records(Mode::Cfg, 1, 4).remove(0);
    let surface = r.landmarks.as_ref().unwrap().end_point.surface.clone();
    r.instruction = r.instruction.replacen(&surface, "END_POINT", 1);
    assert_eq!(placeholder_residue(&r.instruction), ["END_POINT"]);
}

/// Byte ranges of `word` in `text` that are not part of a longer or
/// hyphenated word.
fn standalone(text: &str, word: &str) -> Vec<usize> {
    let bytes = text.as_bytes();
    text.match_indices(word)
        .map(|(i, _)| i)
        .filter(|&i| {
            let before = i.checked_sub(1).map(|j| bytes[j]);
            let after = bytes.get(i + word.len()).copied();
            [before, after].into_iter().flatten().all(|b| !b.is_ascii_alphanumeric() && b != b'-')
        })
        .collect()
}

#[test]
fn verifier_localizes_a_mutated_cardinal() {
    let verifier = Verifier::new(&CITY, &FULL_POOL);
    let mut mutated = 0;
    for mut r in records(Mode::Cfg, 400, 21) {
        let template = FULL_POOL.get(r.template_id.as_deref().unwrap()).unwrap();
        let uses = |p: Placeholder| template.placeholders().contains(p);
        if !uses(Placeholder::CardinalDirection) || uses(Placeholder::PivotDirection) || uses(Placeholder::NearDirection) {
            continue;
        }
        let dir = r.features.as_ref().unwrap().cardinal_start_to_goal;
        let hits = standalone(&r.instruction, dir.word());
        let [at] = hits[..] else { continue };
        let opposite = CardinalDirection::ALL[(dir as usize + 4) % 8];
        let original = r.instruction.clone();
        r.instruction.replace_range(at..at + dir.word().len(), opposite.word());
        let report = verifier.verify(&r).unwrap();
        assert!(!report.passed, "{original}");
        assert_eq!(report.diffs.len(), 1, "{:?}", report.diffs);
        let diff = &report.diffs[0];
        assert_eq!(diff.slot, "CARDINAL_DIRECTION");
        assert_eq!(diff.expected, dir.word());
        assert_eq!(diff.found, opposite.word());
        mutated += 1;
    }
    assert!(mutated >= 10, "only {mutated} records mutated");
}

#[test]
fn records_round_trip_through_json_lines() {
    let originals = records(Mode::Cfg, 50, 17);
    let text: String = originals.iter().map(|r| serde_json::to_string(r).unwrap() + "\n").collect();
    let parsed: Vec<InstructionRecord> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(parsed, originals);
}

#[test]
fn allocentric_mode_never_uses_egocentric_slots() {
    let pool = pool_for_mode(Mode::CfgAllocentric, &TEMPLATES).unwrap();
    for r in records(Mode::CfgAllocentric, 200, 5) {
        let t = pool.get(r.template_id.as_deref().unwrap()).unwrap();
        assert!(t.placeholders().iter().all(|p| p.class() != RelationClass::Egocentric));
        assert!(!r.instruction.contains("on your left") && !r.instruction.contains("on your right"));
    }
}

#[test]
fn generation_is_per_index_deterministic() {
    let pool = pool_for_mode(Mode::Cfg, &TEMPLATES);
    let generator = Generator::new(&CITY, pool.as_ref(), GeneratorConfig::new(Mode::Cfg)).unwrap();
    assert_eq!(generator.generate(0, 1).count(), 0);
    let batch: Vec<InstructionRecord> = generator.generate(12, 77).map(|r| r.unwrap()).collect();
    for i in [11, 0, 5] {
        assert_eq!(generator.generate_one(77, i).unwrap(), batch[i as usize]);
    }
    let other: Vec<InstructionRecord> = generator.generate(12, 78).map(|r| r.unwrap()).collect();
    assert_ne!(batch, other);
}
