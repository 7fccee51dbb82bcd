// Scratch probe for the overfit oracle; will be folded into the
// acceptance suite once hyperparameters are settled.

use toxprompt_core::lm::{Family, LmBackend, TinyLm};
use toxprompt_core::metrics::Label;
use toxprompt_core::pipelines::{classify, Verbalizer};
use toxprompt_core::prompt::{init_prompt, tune, Duration, TrainExample, TuneConfig};

fn separable_set(marker: &str, seed: u64) -> Vec<(String, Label)> {
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    let fillers = [
        "the", "a", "dog", "cat", "you", "are", "is", "nice", "day", "sun", "rain", "walk",
        "run", "talk", "see", "go",
    ];
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for i in 0..16 {
        let toxic = i % 2 == 0;
        let len = rng.gen_range(3..=5);
        let mut words: Vec<String> = (0..len)
            .map(|_| fillers.choose(&mut rng).unwrap().to_string())
            .collect();
        if toxic {
            let pos = rng.gen_range(0..=words.len());
            words.insert(pos, marker.to_string());
        }
        out.push((words.join(" "), Label::from_bool(toxic)));
    }
    out
}

#[test]
fn overfit_probe() {
    for family in [Family::EncoderDecoder, Family::DecoderOnly] {
        for model_seed in [7, 21, 99] {
            for data_seed in [1234, 777] {
                probe(family, model_seed, data_seed);
            }
        }
    }
}

fn probe(family: Family, model_seed: u64, data_seed: u64) {
    let lm = TinyLm::seeded_default(family, model_seed);
    let verbalizer = Verbalizer::default();
    let data = separable_set("TOXMARK", data_seed);
    let examples: Vec<TrainExample> = data
        .iter()
        .map(|(text, label)| TrainExample {
            input: text.clone(),
            target: if label.is_toxic() {
                verbalizer.toxic_word.clone()
            } else {
                verbalizer.nontoxic_word.clone()
            },
        })
        .collect();

    let mut cfg = TuneConfig::task1_defaults();
    cfg.duration = Duration::Steps(2000);
    cfg.seed = 5;
    let prompt = init_prompt(
        &cfg,
        &lm,
        Some(&[verbalizer.toxic_word.clone(), verbalizer.nontoxic_word.clone()]),
    )
    .unwrap();

    let t0 = std::time::Instant::now();
    let (ckpt, history) = tune(prompt, &examples, &lm, &cfg).unwrap();
    let train_time = t0.elapsed();

    let mut correct = 0;
    for (text, gold) in &data {
        let (label, _) = classify(&ckpt.params, &lm, &verbalizer, text).unwrap();
        if label == *gold {
            correct += 1;
        }
    }
    let acc = correct as f64 / data.len() as f64;
    eprintln!(
        "{family:?} model_seed={model_seed} data_seed={data_seed}: accuracy {acc} \
         in {train_time:?}; first loss {:.4} last loss {:.4}",
        history.first().unwrap().loss,
        history.last().unwrap().loss
    );
    assert!(acc >= 0.95, "accuracy {acc} for {family:?}/{model_seed}/{data_seed}");
}
