use std::collections::BTreeMap;

use cycle_eae::eval::pearson;
use cycle_eae::frontend::{mean_pitch, MelFrontend, HOP, SAMPLE_RATE};
use cycle_eae::synth::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn argmax_track(fe: &MelFrontend, s: &SpeakerFactor, w: &ContentFactor, seed: u64) -> Vec<f64> {
    let m = fe.analyze(&generate_utterance(s, w, seed).unwrap()).unwrap();
    let centers = fe.filterbank().centers();
    (0..m.frames())
        .map(|t| {
            let col = m.values().column(t);
            let k = (0..col.len()).max_by(|&a, &b| col[a].total_cmp(&col[b])).unwrap();
            centers[k]
        })
        .collect()
}

#[test]
fn duration_law() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let w = sample_content(&mut rng, 2_000);
    let clip = generate_utterance(&desk_speakers()[0], &w, 1).unwrap();
    let expected = w.total_ms() as usize * SAMPLE_RATE as usize / 1000;
    assert!(clip.len().abs_diff(expected) <= CROSSFADE, "{} vs {expected}", clip.len());
    assert!(w.total_ms() >= 2_000);
}

#[test]
fn shared_content_gives_correlated_argmax_tracks() {
    let fe = MelFrontend::default();
    let spk = desk_speakers();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut corr = Vec::new();
    for k in 0..4 {
        let w = sample_content(&mut rng, 1_600);
        let a = argmax_track(&fe, &spk[0], &w, k);
        let b = argmax_track(&fe, &spk[1], &w, k);
        corr.push(pearson(&a, &b).unwrap());
    }
    let mean = corr.iter().sum::<f64>() / corr.len() as f64;
    assert!(mean > 0.8, "argmax-track correlation {mean:.3} ({corr:?})");
}

#[test]
fn default_desk_corpus_profile() {
    let spec = CorpusSpec::new(desk_speakers(), 100, 1);
    let corpus = render_corpus(&spec).unwrap();
    assert_eq!(corpus.utterances.len(), 400);
    for id in corpus.speaker_ids() {
        let secs: f64 = corpus.utterances_of(&id).map(|u| u.clip.duration_secs()).sum();
        assert!(secs >= 150.0, "{id}: {secs:.1} s");
    }
    // threshold on mean pitch between the low and high registers
    let mut correct = 0;
    let mut total = 0;
    for u in &corpus.utterances {
        let low = corpus.speaker(&u.speaker_id).unwrap().f0_base < 160.0;
        let p = mean_pitch(&u.clip).unwrap_or(0.0);
        correct += usize::from((p < 160.0) == low);
        total += 1;
    }
    let acc = correct as f64 / total as f64;
    assert!(acc > 0.95, "pitch-threshold accuracy {acc:.3}");
}

#[test]
fn content_domination_holds_on_default_corpus() {
    let spec = CorpusSpec::new(desk_speakers(), 100, 1);
    let corpus = render_corpus(&spec).unwrap();
    let r = content_domination_ratio(&corpus, 200, 0).unwrap();
    assert!(r.ratio < 1.0, "{r:?}");
}

#[test]
fn domination_report_degenerate_probes() {
    let fe = MelFrontend::default();
    let spk = desk_speakers();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let w0 = sample_content(&mut rng, 1_600);
    let w = sample_content(&mut rng, 1_600);
    let same_speaker = domination_report(&[(&spk[0], &spk[0], &w0, &w, 5)], &fe).unwrap();
    assert_eq!(same_speaker.same_word_cross_speaker, 0.0);
    let same_word = domination_report(&[(&spk[0], &spk[1], &w0, &w0, 5)], &fe).unwrap();
    assert_eq!(same_word.ratio, 1.0);
    let single = render_corpus(&CorpusSpec::new(spk[..1].to_vec(), 2, 0)).unwrap();
    assert!(content_domination_ratio(&single, 4, 0).is_err());
}

/// Per-unit mean mel frames of two speakers reading the same content: each
/// unit's mean is nearest to the other speaker's mean for the same unit.
#[test]
fn content_is_recoverable_across_speakers() {
    // Low-register pair: at high f0 the resolved harmonics dominate unit
    // means, so the nearest-mean match is only meaningful here.
    let fe = MelFrontend::default();
    let spk = desk_speakers();
    let (low_a, low_c) = (&spk[0], &spk[2]);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut hits = 0;
    let mut total = 0;
    for _ in 0..16 {
        let w = sample_content(&mut rng, 1_600);
        let seed = rng.gen();
        let means = |s: &SpeakerFactor| {
            let m = fe.analyze(&generate_utterance(s, &w, seed).unwrap()).unwrap();
            let units = w.frame_units(m.frames(), HOP);
            let mut acc: BTreeMap<u8, (Vec<f64>, usize)> = BTreeMap::new();
            // interior frames only: cross-fades blur the first and last two
            for t in 2..units.len().saturating_sub(2) {
                let u = units[t];
                if units[t - 2..=t + 2].iter().any(|&v| v != u) {
                    continue;
                }
                let e = acc.entry(u).or_insert_with(|| (vec![0.0; m.rows()], 0));
                for (a, v) in e.0.iter_mut().zip(m.values().column(t)) {
                    *a += v;
                }
                e.1 += 1;
            }
            let mut out: BTreeMap<u8, Vec<f64>> = acc
                .into_iter()
                .map(|(u, (s, n))| (u, s.into_iter().map(|v| v / n as f64).collect()))
                .collect();
            // remove the speaker's average spectrum (tilt and level)
            let n = out.len() as f64;
            let mut avg = vec![0.0; m.rows()];
            for v in out.values() {
                for (a, x) in avg.iter_mut().zip(v) {
                    *a += x / n;
                }
            }
            for v in out.values_mut() {
                for (x, a) in v.iter_mut().zip(&avg) {
                    *x -= a;
                }
            }
            out
        };
        let a = means(low_a);
        let b = means(low_c);
        let dist = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum::<f64>();
        for (u, ma) in &a {
            let nearest =
                b.iter().min_by(|x, y| dist(ma, x.1).total_cmp(&dist(ma, y.1))).map(|(v, _)| *v).unwrap();
            hits += usize::from(nearest == *u);
            total += 1;
        }
    }
    let rate = hits as f64 / total as f64;
    assert!(total >= 60, "only {total} interior units");
    assert!(rate > 0.9, "per-unit nearest-mean agreement {rate:.3}");
    eprintln!("agreement {rate:.3} over {total} units");
}
