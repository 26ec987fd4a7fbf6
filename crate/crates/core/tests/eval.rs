use std::collections::BTreeMap;

use proptest::prelude::*;

use dabwe::eval::{
    compute_eer, compute_min_dcf, cosine, embed_utterance, log_spectral_distance, score_trials, TrialList, P_TARGET,
};
use dabwe::signals::{build_corpus, CorpusConfig, Waveform, MODEL_RATE};

fn labelled_scores() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    prop::collection::vec((-5.0f64..5.0, any::<bool>()), 4..120).prop_filter("both classes", |v| {
        v.iter().any(|p| p.1) && v.iter().any(|p| !p.1)
    })
    .prop_map(|v| v.into_iter().unzip())
}

proptest! {
    #[test]
    fn scorers_are_invariant_under_increasing_maps(
        (scores, labels) in labelled_scores(),
        scale in 0.1f64..10.0,
        shift in -3.0f64..3.0,
    ) {
        let eer = compute_eer(&scores, &labels).unwrap();
        let dcf = compute_min_dcf(&scores, &labels, P_TARGET).unwrap();
        prop_assert!((0.0..=100.0).contains(&eer));
        prop_assert!((0.0..=1.0 + 1e-12).contains(&dcf));
        for f in [
            &(|s: f64| scale * s + shift) as &dyn Fn(f64) -> f64,
            &|s: f64| s.exp(),
            &|s: f64| s * s * s + s,
        ] {
            let t: Vec<f64> = scores.iter().map(|&s| f(s)).collect();
            prop_assert!((compute_eer(&t, &labels).unwrap() - eer).abs() < 1e-9);
            prop_assert!((compute_min_dcf(&t, &labels, P_TARGET).unwrap() - dcf).abs() < 1e-12);
        }
    }

    #[test]
    fn lsd_is_symmetric_and_zero_on_the_diagonal(
        x in prop::collection::vec(-1.0f64..1.0, 600..1200),
        seed in 0u64..100,
    ) {
        let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| 0.7 * v + 0.05 * ((i as u64 + seed) as f64).sin()).collect();
        let (wx, wy) = (Waveform::new(x, MODEL_RATE).unwrap(), Waveform::new(y, MODEL_RATE).unwrap());
        let xy = log_spectral_distance(&wx, &wy).unwrap();
        let yx = log_spectral_distance(&wy, &wx).unwrap();
        prop_assert!(xy >= 0.0);
        prop_assert!((xy - yx).abs() < 1e-12);
        prop_assert_eq!(log_spectral_distance(&wx, &wx).unwrap(), 0.0);
    }
}

#[test]
fn same_speaker_trials_score_higher_than_different_speaker_trials() {
    let corpus = build_corpus(&CorpusConfig::new(4, 4, 8)).unwrap();
    let wide = &corpus.wide_mic;
    let embeddings: BTreeMap<String, Vec<f64>> = wide
        .utterances
        .iter()
        .map(|u| (u.utterance_id.clone(), embed_utterance(&u.waveform).unwrap()))
        .collect();
    let utts: Vec<(String, String)> = wide
        .utterances
        .iter()
        .map(|u| (u.utterance_id.clone(), u.speaker_id.clone()))
        .collect();
    let trials = TrialList::exhaustive(&utts);
    let scores = score_trials(&embeddings, &trials).unwrap();
    let mean = |target: bool| {
        let v: Vec<f64> = scores
            .iter()
            .zip(trials.labels())
            .filter(|(_, l)| *l == target)
            .map(|(s, _)| *s)
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    assert!(mean(true) > mean(false), "target {} vs non-target {}", mean(true), mean(false));
    assert!(compute_eer(&scores, &trials.labels()).unwrap() < 50.0);
}

#[test]
fn cosine_is_scale_invariant() {
    let a = [0.3, -1.2, 2.0];
    let b = [1.0, 0.5, -0.25];
    let scaled: Vec<f64> = a.iter().map(|v| 4.0 * v).collect();
    assert!((cosine(&a, &b) - cosine(&scaled, &b)).abs() < 1e-12);
    assert!((cosine(&a, &a) - 1.0).abs() < 1e-12);
}
