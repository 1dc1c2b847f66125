//! Synthetic helpline corpus: templated queries with a crop slot, per-token
//! noise, and templated answers. Ground-truth template ids are kept alongside.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CallRecord, CropLexicon};
use crate::error::{Error, Result};

pub const TEMPLATES: [&str; 20] = [
    "how to control fungal attack in {crop}",
    "recommended fertilizer dose for {crop} crop",
    "how to control aphids on {crop} leaves",
    "yellowing of leaves in {crop} plants remedy",
    "information about seed treatment for {crop} before sowing",
    "how to manage stem borer in {crop}",
    "suitable variety of {crop} for late sowing",
    "control of weeds in {crop} field after germination",
    "how to increase flowering in {crop}",
    "nutrient management for {crop} at tillering stage",
    "fruit drop problem in {crop} orchard",
    "termite attack on {crop} roots control measure",
    "irrigation schedule for {crop} during summer",
    "leaf curl virus in {crop} management",
    "how to apply zinc sulphate in {crop}",
    "root rot disease in {crop} nursery",
    "spacing and planting method for {crop}",
    "whitefly infestation in {crop} spray advice",
    "how to store {crop} harvest without pest damage",
    "nematode problem in {crop} soil treatment",
];

const REMEDIES: [&str; 20] = [
    "spray mancozeb fungicide",
    "apply urea and dap in split doses",
    "spray imidacloprid insecticide",
    "apply ferrous sulphate foliar spray",
    "treat seed with carbendazim powder",
    "spray chlorantraniliprole against borer",
    "sow short duration tolerant variety",
    "apply pendimethalin herbicide",
    "spray planofix hormone solution",
    "apply potash and nitrogen top dressing",
    "spray naphthalene acetic acid",
    "drench chlorpyriphos near root zone",
    "irrigate at weekly interval",
    "remove infected plants and spray neem oil",
    "apply zinc sulphate with farmyard manure",
    "drench copper oxychloride in nursery beds",
    "keep row spacing and transplant seedlings",
    "spray thiamethoxam with sticker",
    "dry produce and store in hermetic bags",
    "apply carbofuran granules in soil",
];

const ANSWER_FORMS: [&str; 3] = [
    "{remedy} {n} ml per litre for {crop}",
    "advised to {remedy} at {n} ml per litre in {crop}",
    "farmer advised {remedy} dose {n} ml per litre {crop}",
];

pub const CROPS: [&str; 15] = [
    "wheat", "paddy", "garlic", "onion", "tomato", "chilli", "cotton", "mosambi", "orange",
    "mango", "potato", "brinjal", "maize", "mustard", "black gram",
];

const NOISE_WORDS: [&str; 40] = [
    "kisan", "tractor", "loan", "subsidy", "village", "district", "helpline", "officer",
    "scheme", "card", "insurance", "urgent", "sir", "madam", "kindly", "tell", "problem",
    "issue", "help", "query", "details", "sample", "block", "panchayat", "krishi", "kendra",
    "number", "office", "visit", "tomorrow", "today", "season", "field", "plot", "acre",
    "bigha", "hectare", "quickly", "advice", "solution",
];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_queries: usize,
    pub n_templates: usize,
    /// Probability that a non-crop query token is replaced by a noise word.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_queries: 2000,
            n_templates: 20,
            noise: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub records: Vec<CallRecord>,
    /// Template id per record.
    pub template: Vec<usize>,
    pub crops: Vec<String>,
}

fn fill(form: &str, crop: &str) -> String {
    form.replace("{crop}", crop)
}

/// Generates a corpus. Templates are assigned round-robin, then the row order
/// is shuffled. Rows are distinct as (crop, query, answer) triples.
pub fn synthetic_corpus(cfg: &SynthConfig) -> Result<SynthCorpus> {
    if cfg.n_templates == 0 || cfg.n_templates > TEMPLATES.len() {
        return Err(Error::Config(format!(
            "n_templates must be in 1..={}",
            TEMPLATES.len()
        )));
    }
    if !(0.0..=1.0).contains(&cfg.noise) {
        return Err(Error::Config(format!("noise {} outside [0, 1]", cfg.noise)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..cfg.n_queries).map(|i| i % cfg.n_templates).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);

    let mut seen = HashSet::new();
    let mut records = Vec::with_capacity(cfg.n_queries);
    for (index, &t) in order.iter().enumerate() {
        let crop = *CROPS.choose(&mut rng).expect("non-empty");
        let query: Vec<String> = fill(TEMPLATES[t], "\u{0}")
            .split_whitespace()
            .map(|w| {
                if w == "\u{0}" {
                    crop.to_string()
                } else if rng.random_bool(cfg.noise) {
                    NOISE_WORDS.choose(&mut rng).expect("non-empty").to_string()
                } else {
                    w.to_string()
                }
            })
            .collect();
        let query = query.join(" ");
        let form = *ANSWER_FORMS.choose(&mut rng).expect("non-empty");
        let answer = loop {
            let n: u32 = rng.random_range(1..=999);
            let a = fill(form, crop)
                .replace("{remedy}", REMEDIES[t])
                .replace("{n}", &n.to_string());
            if seen.insert((crop, query.clone(), a.clone())) {
                break a;
            }
        };
        records.push(CallRecord {
            index,
            crop: crop.to_string(),
            query_raw: query,
            answer_raw: answer,
        });
    }
    Ok(SynthCorpus {
        records,
        template: order,
        crops: CROPS.iter().map(|c| c.to_string()).collect(),
    })
}

impl SynthCorpus {
    pub fn lexicon(&self) -> CropLexicon {
        CropLexicon::new(self.crops.iter().cloned())
    }

    /// Writes `Crop,QueryText,KccAns` CSV.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Artifact(e.to_string()))?;
        w.write_record(["Crop", "QueryText", "KccAns"])
            .map_err(|e| Error::Artifact(e.to_string()))?;
        for r in &self.records {
            w.write_record([&r.crop, &r.query_raw, &r.answer_raw])
                .map_err(|e| Error::Artifact(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// One crop per line.
    pub fn write_lexicon(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        for c in &self.crops {
            writeln!(f, "{c}").map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }
}
