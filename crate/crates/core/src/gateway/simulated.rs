//! Deterministic stand-ins for the LLM generator and the training evaluator.

use std::fmt::Write as _;
use std::hash::Hasher;

use fnv::FnvHasher;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    EvalContext, EvalResult, Evaluator, GatewayError, Generated, GenerationRequest, Generator,
    TrainingHyperparameters, ValidityReport, ValidityStage,
};
use crate::lexshingle::{self, TokenKind, TokenSequence};
use crate::stats::normal_quantile;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulatedGeneratorConfig {
    /// Fraction of candidates with an injected syntax fault (fails parsing).
    pub syntax_fault_rate: f64,
    /// Fraction of the remaining candidates that break instantiation, the
    /// forward pass, or the API contract.
    pub semantic_fault_rate: f64,
    /// Fraction of candidates that re-emit an earlier slot of the same cycle,
    /// either verbatim or with a one-token edit.
    pub near_duplicate_rate: f64,
}

impl Default for SimulatedGeneratorConfig {
    fn default() -> Self {
        Self {
            syntax_fault_rate: 0.25,
            semantic_fault_rate: 0.15,
            near_duplicate_rate: 0.05,
        }
    }
}

/// Template-pool generator with seeded structural mutations.
#[derive(Debug, Clone, Default)]
pub struct SimulatedGenerator {
    pub config: SimulatedGeneratorConfig,
}

impl SimulatedGenerator {
    pub fn new(config: SimulatedGeneratorConfig) -> Self {
        Self { config }
    }

    /// Candidate source for one slot. Pure in its arguments.
    pub fn candidate(&self, seed: u64, cycle: u32, slot: u32, round: u32) -> String {
        let mut decide =
            ChaCha8Rng::seed_from_u64(mix(&[seed, cycle as u64, slot as u64, round as u64, 1]));
        let duplicate_of = if slot > 0 && decide.gen_bool(self.config.near_duplicate_rate) {
            Some(decide.gen_range(0..slot))
        } else {
            None
        };
        let syntax_fault = decide.gen_bool(self.config.syntax_fault_rate);
        let semantic_fault = !syntax_fault && decide.gen_bool(self.config.semantic_fault_rate);

        let mut source = match duplicate_of {
            Some(earlier) => {
                let arch = Architecture::sample(&mut spec_rng(seed, cycle, earlier, round));
                let mut src = arch.render();
                if decide.gen_bool(0.5) {
                    src = src.replacen("momentum=prm[\"momentum\"]", "momentum=prm['momentum']", 1);
                }
                src
            }
            None => Architecture::sample(&mut spec_rng(seed, cycle, slot, round)).render(),
        };
        if syntax_fault {
            source = inject_syntax_fault(&source, &mut decide);
        } else if semantic_fault {
            source = inject_semantic_fault(&source, &mut decide);
        }
        source
    }

    /// Fault-free snippet for building a synthetic seed corpus. Never
    /// collides with a slot of any cycle run by the orchestrator.
    pub fn seed_snippet(seed: u64, index: u32) -> String {
        Architecture::sample(&mut spec_rng(seed, 0, index, u32::MAX)).render()
    }
}

impl Generator for SimulatedGenerator {
    fn generate(&mut self, request: &GenerationRequest) -> Vec<Generated> {
        (request.first_slot..request.first_slot + request.count)
            .map(|slot| Ok(self.candidate(request.seed, request.cycle, slot, request.state.round)))
            .collect()
    }
}

fn spec_rng(seed: u64, cycle: u32, slot: u32, round: u32) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(&[seed, cycle as u64, slot as u64, round as u64, 0]))
}

fn mix(parts: &[u64]) -> u64 {
    let mut h = FnvHasher::default();
    for p in parts {
        h.write_u64(*p);
    }
    h.finish()
}

#[derive(Debug, Clone)]
struct Block {
    channels: u32,
    kernel: u32,
    convs: u32,
    norm: &'static str,
    activation: &'static str,
    pool: Option<&'static str>,
    dropout: Option<f64>,
}

#[derive(Debug, Clone)]
struct Architecture {
    blocks: Vec<Block>,
    explicit_layers: bool,
    global_pool: &'static str,
    hidden: Option<u32>,
    head_dropout: f64,
    nesterov: bool,
    weight_decay: f64,
    clip: Option<f64>,
}

const CHANNELS: &[u32] = &[16, 24, 32, 40, 48, 64, 80, 96, 128];
const NORMS: &[&str] = &["BatchNorm2d", "GroupNorm", "none"];
const ACTIVATIONS: &[&str] = &[
    "ReLU",
    "GELU",
    "SiLU",
    "LeakyReLU",
    "ELU",
    "Hardswish",
    "Mish",
];
const POOLS: &[&str] = &["MaxPool2d", "AvgPool2d"];

impl Architecture {
    fn sample(rng: &mut ChaCha8Rng) -> Self {
        let n_blocks = rng.gen_range(2..=5);
        let blocks = (0..n_blocks)
            .map(|i| Block {
                channels: *CHANNELS.choose(rng).unwrap(),
                kernel: if rng.gen_bool(0.7) { 3 } else { 5 },
                convs: rng.gen_range(1..=2),
                norm: NORMS.choose(rng).unwrap(),
                activation: ACTIVATIONS.choose(rng).unwrap(),
                pool: if i < 3 && rng.gen_bool(0.7) {
                    Some(POOLS.choose(rng).unwrap())
                } else {
                    None
                },
                dropout: if rng.gen_bool(0.35) {
                    Some([0.05, 0.1, 0.15, 0.2, 0.25][rng.gen_range(0..5)])
                } else {
                    None
                },
            })
            .collect();
        Self {
            blocks,
            explicit_layers: rng.gen_bool(0.5),
            global_pool: if rng.gen_bool(0.75) {
                "AdaptiveAvgPool2d"
            } else {
                "AdaptiveMaxPool2d"
            },
            hidden: if rng.gen_bool(0.5) {
                Some([64, 96, 128, 192, 256][rng.gen_range(0..5)])
            } else {
                None
            },
            head_dropout: [0.0, 0.1, 0.2, 0.3, 0.4, 0.5][rng.gen_range(0..6)],
            nesterov: rng.gen_bool(0.5),
            weight_decay: [0.0, 1e-4, 5e-4, 1e-3][rng.gen_range(0..4)],
            clip: if rng.gen_bool(0.5) {
                Some([1.0, 2.0, 3.0, 5.0][rng.gen_range(0..4)])
            } else {
                None
            },
        }
    }

    fn layer_lines(&self) -> Vec<String> {
        let mut lines = Vec::new();
        let mut in_ch = 3;
        for b in &self.blocks {
            for _ in 0..b.convs {
                lines.push(format!(
                    "nn.Conv2d({in_ch}, {}, kernel_size={}, padding={}, bias={})",
                    b.channels,
                    b.kernel,
                    b.kernel / 2,
                    if b.norm == "none" { "True" } else { "False" }
                ));
                match b.norm {
                    "BatchNorm2d" => lines.push(format!("nn.BatchNorm2d({})", b.channels)),
                    "GroupNorm" => lines.push(format!("nn.GroupNorm(8, {})", b.channels)),
                    _ => {}
                }
                lines.push(match b.activation {
                    "LeakyReLU" => "nn.LeakyReLU(0.1, inplace=True)".to_string(),
                    "ReLU" => "nn.ReLU(inplace=True)".to_string(),
                    a => format!("nn.{a}()"),
                });
                in_ch = b.channels;
            }
            if let Some(p) = b.pool {
                lines.push(format!("nn.{p}(kernel_size=2, stride=2)"));
            }
            if let Some(d) = b.dropout {
                lines.push(format!("nn.Dropout2d(p={d})"));
            }
        }
        lines
    }

    fn out_channels(&self) -> u32 {
        self.blocks.last().map(|b| b.channels).unwrap_or(3)
    }

    fn render(&self) -> String {
        let mut s = String::new();
        s.push_str("import torch\nimport torch.nn as nn\n\n\n");
        s.push_str("def supported_hyperparameters():\n    return {\"lr\", \"momentum\"}\n\n\n");
        s.push_str("class Net(nn.Module):\n");
        s.push_str("    def __init__(self, in_shape, out_shape, prm, device):\n");
        s.push_str("        super().__init__()\n        self.device = device\n");
        let layers = self.layer_lines();
        if self.explicit_layers {
            for (i, l) in layers.iter().enumerate() {
                let _ = writeln!(s, "        self.layer{i} = {l}");
            }
        } else {
            s.push_str("        self.features = nn.Sequential(\n");
            for l in &layers {
                let _ = writeln!(s, "            {l},");
            }
            s.push_str("        )\n");
        }
        let _ = writeln!(s, "        self.pool = nn.{}((1, 1))", self.global_pool);
        let feat = self.out_channels();
        s.push_str("        self.classifier = nn.Sequential(\n            nn.Flatten(),\n");
        if self.head_dropout > 0.0 {
            let _ = writeln!(s, "            nn.Dropout(p={}),", self.head_dropout);
        }
        match self.hidden {
            Some(h) => {
                let _ = writeln!(s, "            nn.Linear({feat}, {h}),");
                s.push_str("            nn.ReLU(inplace=True),\n");
                let _ = writeln!(s, "            nn.Linear({h}, out_shape[0]),");
            }
            None => {
                let _ = writeln!(s, "            nn.Linear({feat}, out_shape[0]),");
            }
        }
        s.push_str("        )\n\n");
        s.push_str("    def forward(self, x):\n");
        if self.explicit_layers {
            for i in 0..layers.len() {
                let _ = writeln!(s, "        x = self.layer{i}(x)");
            }
        } else {
            s.push_str("        x = self.features(x)\n");
        }
        s.push_str("        x = self.pool(x)\n        return self.classifier(x)\n\n");
        s.push_str("    def train_setup(self, prm):\n        self.to(self.device)\n");
        s.push_str("        self.criteria = (nn.CrossEntropyLoss().to(self.device),)\n");
        let _ = writeln!(
            s,
            "        self.optimizer = torch.optim.SGD(self.parameters(), lr=prm[\"lr\"], momentum=prm[\"momentum\"], weight_decay={}, nesterov={})",
            self.weight_decay,
            if self.nesterov { "True" } else { "False" }
        );
        s.push_str("\n    def learn(self, train_data):\n        self.train()\n");
        s.push_str("        for inputs, labels in train_data:\n");
        s.push_str("            inputs, labels = inputs.to(self.device), labels.to(self.device)\n");
        s.push_str("            self.optimizer.zero_grad()\n");
        s.push_str("            loss = self.criteria[0](self(inputs), labels)\n");
        s.push_str("            loss.backward()\n");
        if let Some(c) = self.clip {
            let _ = writeln!(
                s,
                "            nn.utils.clip_grad_norm_(self.parameters(), {c})"
            );
        }
        s.push_str("            self.optimizer.step()\n");
        s
    }
}

fn inject_syntax_fault(source: &str, rng: &mut ChaCha8Rng) -> String {
    match rng.gen_range(0..3) {
        0 => {
            // drop one closing parenthesis
            let closes: Vec<usize> = source.match_indices(')').map(|(i, _)| i).collect();
            let at = closes[rng.gen_range(0..closes.len())];
            let mut s = source.to_string();
            s.remove(at);
            s
        }
        1 => {
            let lines: Vec<&str> = source.lines().collect();
            let at = rng.gen_range(1..lines.len());
            let mut out: Vec<String> = lines.iter().map(|l| l.to_string()).collect();
            out[at] = format!("{} $", out[at]);
            out.join("\n") + "\n"
        }
        _ => {
            // truncated generation with a dangling open call
            let cut = rng.gen_range(source.len() / 3..source.len() * 9 / 10);
            let cut = (0..=cut)
                .rev()
                .find(|&i| source.is_char_boundary(i))
                .unwrap_or(0);
            format!("{}(\n", &source[..cut])
        }
    }
}

fn inject_semantic_fault(source: &str, rng: &mut ChaCha8Rng) -> String {
    match rng.gen_range(0..4) {
        0 => source.replacen("class Net(", "class Model(", 1),
        1 => source.replacen("def forward(", "def predict(", 1),
        2 => source.replacen("{\"lr\", \"momentum\"}", "{\"lr\"}", 1),
        _ => source.replacen("def learn(", "def fit(", 1),
    }
}

/// Stage-ordered structural checks on a token stream: balanced delimiters,
/// class `Net` with `__init__`, a `forward` method, and the API contract.
pub fn check_markers(source: &str) -> ValidityReport {
    let tokens = match lexshingle::tokenize(source) {
        Ok(t) => t,
        Err(e) => return ValidityReport::failed_at(ValidityStage::Parse, e.to_string()),
    };
    if let Err(msg) = parses(&tokens) {
        return ValidityReport::failed_at(ValidityStage::Parse, msg);
    }
    if !has_sequence(&tokens, &["class", "Net"]) || !has_def(&tokens, "__init__") {
        return ValidityReport::failed_at(
            ValidityStage::Instantiate,
            "class Net with __init__ not found",
        );
    }
    if !has_def(&tokens, "forward") {
        return ValidityReport::failed_at(ValidityStage::Forward, "Net.forward not found");
    }
    for required in ["train_setup", "learn", "supported_hyperparameters"] {
        if !has_def(&tokens, required) {
            return ValidityReport::failed_at(
                ValidityStage::Contract,
                format!("missing {required}"),
            );
        }
    }
    match declared_hyperparameters(&tokens) {
        Some(mut names) => {
            names.sort();
            if names != ["lr", "momentum"] {
                return ValidityReport::failed_at(
                    ValidityStage::Contract,
                    format!("supported_hyperparameters returns {names:?}"),
                );
            }
        }
        None => {
            return ValidityReport::failed_at(
                ValidityStage::Contract,
                "supported_hyperparameters does not return a set literal",
            )
        }
    }
    ValidityReport::passed()
}

fn parses(tokens: &TokenSequence) -> Result<(), String> {
    if tokens.is_empty() {
        return Err("empty source".into());
    }
    let mut stack = Vec::new();
    for tok in tokens.iter() {
        if tok.is_unlexable() {
            return Err(format!("unexpected {:?}", tok.text));
        }
        if tok.kind != TokenKind::Delimiter {
            continue;
        }
        match tok.text.as_str() {
            "(" | "[" | "{" => stack.push(tok.text.as_str()),
            ")" | "]" | "}" => {
                let open = stack
                    .pop()
                    .ok_or_else(|| format!("unmatched {:?}", tok.text))?;
                let expected = match open {
                    "(" => ")",
                    "[" => "]",
                    _ => "}",
                };
                if tok.text != expected {
                    return Err(format!("{:?} closed by {:?}", open, tok.text));
                }
            }
            _ => {}
        }
    }
    match stack.last() {
        Some(open) => Err(format!("unclosed {open:?}")),
        None => Ok(()),
    }
}

fn has_sequence(tokens: &TokenSequence, words: &[&str]) -> bool {
    tokens
        .tokens
        .windows(words.len())
        .any(|w| w.iter().zip(words).all(|(t, s)| t.text == *s))
}

fn has_def(tokens: &TokenSequence, name: &str) -> bool {
    has_sequence(tokens, &["def", name, "("])
}

fn declared_hyperparameters(tokens: &TokenSequence) -> Option<Vec<String>> {
    let toks = &tokens.tokens;
    let start = toks
        .windows(2)
        .position(|w| w[0].text == "def" && w[1].text == "supported_hyperparameters")?;
    let ret = start + toks[start..].iter().position(|t| t.text == "return")?;
    if toks.get(ret + 1)?.text != "{" {
        return None;
    }
    let mut names = Vec::new();
    for tok in &toks[ret + 2..] {
        match (tok.kind, tok.text.as_str()) {
            (_, "}") => return Some(names),
            (TokenKind::StringLiteral, text) => {
                names.push(text.trim_matches(['"', '\'']).to_string())
            }
            (_, ",") => {}
            _ => return None,
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulatedEvaluatorConfig {
    /// Mean accuracy before any fine-tuning round.
    pub base_mean: f64,
    /// Increase of the mean per fine-tuning round.
    pub gain_per_round: f64,
    pub max_mean: f64,
    /// Standard deviation of accuracy around the mean.
    pub spread: f64,
    /// Fraction of valid candidates that raise during training.
    pub runtime_failure_rate: f64,
}

impl Default for SimulatedEvaluatorConfig {
    fn default() -> Self {
        Self {
            base_mean: 0.28,
            gain_per_round: 0.011,
            max_mean: 0.50,
            spread: 0.07,
            runtime_failure_rate: 0.03,
        }
    }
}

/// Accuracy is a bounded function of the source hash and the generator round.
#[derive(Debug, Clone, Default)]
pub struct SimulatedEvaluator {
    pub config: SimulatedEvaluatorConfig,
}

impl SimulatedEvaluator {
    pub const ID: &'static str = "simulated-v1";

    pub fn new(config: SimulatedEvaluatorConfig) -> Self {
        Self { config }
    }

    pub fn mean_for_round(&self, round: u32) -> f64 {
        (self.config.base_mean + self.config.gain_per_round * round as f64)
            .min(self.config.max_mean)
    }

    pub fn accuracy(&self, source: &str, round: u32) -> f64 {
        let z = normal_quantile(unit_from_hash(content_hash(source, 0)));
        (self.mean_for_round(round) + self.config.spread * z).clamp(0.0, 1.0)
    }
}

fn content_hash(source: &str, salt: u64) -> u64 {
    let mut h = FnvHasher::default();
    h.write_u64(salt);
    h.write(source.as_bytes());
    // FNV alone leaves the high bits poorly mixed for short suffix changes
    let mut x = h.finish();
    x ^= x >> 33;
    x = x.wrapping_mul(0xff51_afd7_ed55_8ccd);
    x ^= x >> 33;
    x = x.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    x ^ (x >> 33)
}

/// Maps a hash to the open interval (0, 1).
fn unit_from_hash(h: u64) -> f64 {
    ((h >> 11) as f64 + 0.5) / (1u64 << 53) as f64
}

impl Evaluator for SimulatedEvaluator {
    fn evaluator_id(&self) -> String {
        Self::ID.to_string()
    }

    fn validate(
        &self,
        _ctx: &EvalContext,
        _id: &str,
        source: &str,
    ) -> Result<ValidityReport, GatewayError> {
        Ok(check_markers(source))
    }

    fn train_one_epoch(
        &self,
        ctx: &EvalContext,
        _id: &str,
        source: &str,
        _hp: &TrainingHyperparameters,
    ) -> Result<EvalResult, GatewayError> {
        if unit_from_hash(content_hash(source, 1)) < self.config.runtime_failure_rate {
            return Err(GatewayError::RuntimeFailure(
                "simulated exception during training".into(),
            ));
        }
        let wall = 1e-3 * source.len() as f64;
        EvalResult::new(self.accuracy(source, ctx.generator_round), wall, Self::ID)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{generate_batch, GeneratorState};

    fn clean() -> SimulatedGenerator {
        SimulatedGenerator::new(SimulatedGeneratorConfig {
            syntax_fault_rate: 0.0,
            semantic_fault_rate: 0.0,
            near_duplicate_rate: 0.0,
        })
    }

    #[test]
    fn fault_free_candidates_all_pass() {
        let mut g = clean();
        for src in generate_batch(&mut g, 60, 1, 42, GeneratorState::default()) {
            let src = src.unwrap();
            let report = check_markers(&src);
            assert!(report.is_valid(), "{}\n{}", report.message(), src);
        }
    }

    #[test]
    fn full_syntax_fault_rate_fails_parse() {
        let mut g = SimulatedGenerator::new(SimulatedGeneratorConfig {
            syntax_fault_rate: 1.0,
            semantic_fault_rate: 0.0,
            near_duplicate_rate: 0.0,
        });
        for src in generate_batch(&mut g, 100, 3, 7, GeneratorState::default()) {
            let report = check_markers(&src.unwrap());
            assert!(!report.parse_ok());
            assert_eq!(report.failure_stage(), Some(ValidityStage::Parse));
        }
    }

    #[test]
    fn semantic_faults_fail_later_stages() {
        let mut g = SimulatedGenerator::new(SimulatedGeneratorConfig {
            syntax_fault_rate: 0.0,
            semantic_fault_rate: 1.0,
            near_duplicate_rate: 0.0,
        });
        let mut stages = std::collections::BTreeSet::new();
        for src in generate_batch(&mut g, 80, 1, 9, GeneratorState::default()) {
            let report = check_markers(&src.unwrap());
            assert!(report.parse_ok());
            assert!(!report.is_valid());
            stages.insert(report.failure_stage().unwrap());
        }
        assert_eq!(
            stages.into_iter().collect::<Vec<_>>(),
            vec![
                ValidityStage::Instantiate,
                ValidityStage::Forward,
                ValidityStage::Contract
            ]
        );
    }

    #[test]
    fn generation_is_deterministic() {
        let mut a = SimulatedGenerator::default();
        let mut b = SimulatedGenerator::default();
        let st = GeneratorState {
            round: 3,
            corpus_pairs: 10,
        };
        assert_eq!(
            generate_batch(&mut a, 20, 4, 5, st),
            generate_batch(&mut b, 20, 4, 5, st)
        );
        // chunking does not change per-slot output
        let tail = a.generate(&GenerationRequest {
            cycle: 4,
            first_slot: 10,
            count: 10,
            seed: 5,
            state: st,
        });
        assert_eq!(tail, generate_batch(&mut b, 20, 4, 5, st)[10..].to_vec());
    }

    #[test]
    fn missing_hyperparameter_function_is_contract_failure() {
        let src = clean()
            .candidate(1, 1, 0, 0)
            .replace("def supported_hyperparameters", "def hyperparameters");
        let r = check_markers(&src);
        assert_eq!(r.failure_stage(), Some(ValidityStage::Contract));
        assert!(!r.contract_ok());
        assert!(r.forward_ok());
    }

    #[test]
    fn truncated_source_fails_parse() {
        let src = clean().candidate(1, 1, 0, 0);
        let cut = &src[..src.find("self.classifier").unwrap() + 40];
        assert!(!check_markers(cut).parse_ok());
    }

    #[test]
    fn wrong_hyperparameter_set_is_contract_failure() {
        let src = clean()
            .candidate(2, 1, 0, 0)
            .replace("{\"lr\", \"momentum\"}", "{'lr'}");
        assert_eq!(
            check_markers(&src).failure_stage(),
            Some(ValidityStage::Contract)
        );
        let single_quoted = clean()
            .candidate(2, 1, 0, 0)
            .replace("{\"lr\", \"momentum\"}", "{'momentum', 'lr'}");
        assert!(check_markers(&single_quoted).is_valid());
    }

    #[test]
    fn accuracy_is_deterministic_and_bounded() {
        let ev = SimulatedEvaluator::default();
        let g = clean();
        let ctx = EvalContext {
            cycle: 1,
            generator_round: 0,
        };
        let hp = TrainingHyperparameters::default();
        for slot in 0..100 {
            let src = g.candidate(3, 1, slot, 0);
            let a = ev.train_one_epoch(&ctx, "x", &src, &hp);
            let b = ev.train_one_epoch(&ctx, "x", &src, &hp);
            assert_eq!(a, b);
            if let Ok(r) = a {
                assert!((0.0..=1.0).contains(&r.accuracy));
            }
        }
        let extreme = SimulatedEvaluator::new(SimulatedEvaluatorConfig {
            base_mean: 0.95,
            spread: 0.5,
            ..Default::default()
        });
        for slot in 0..100 {
            let acc = extreme.accuracy(&g.candidate(3, 1, slot, 0), 0);
            assert!((0.0..=1.0).contains(&acc));
        }
    }

    #[test]
    fn cycle_one_mean_matches_configuration() {
        // 500 seeded candidates around a 0.28 mean
        let ev = SimulatedEvaluator::default();
        let g = clean();
        let n = 500;
        let mean: f64 = (0..n)
            .map(|s| ev.accuracy(&g.candidate(17, 1, s, 0), 0))
            .sum::<f64>()
            / n as f64;
        assert!((mean - 0.28).abs() <= 0.02, "mean {mean}");
    }

    #[test]
    fn distinct_templates_are_mostly_novel() {
        use crate::sketch::{estimate_jaccard, SketchParams, Sketcher};
        let sk = Sketcher::new(SketchParams::new(10, 256, 1).unwrap()).unwrap();
        let g = clean();
        let sigs: Vec<_> = (0..60)
            .map(|s| sk.sketch(&g.candidate(5, 1, s, 0)).unwrap())
            .collect();
        let mut above = 0;
        let mut pairs = 0;
        for i in 0..sigs.len() {
            for j in i + 1..sigs.len() {
                pairs += 1;
                if estimate_jaccard(&sigs[i], &sigs[j]).unwrap() > 0.9 {
                    above += 1;
                }
            }
        }
        assert!(above * 100 < pairs, "{above} of {pairs} pairs above 0.9");
    }
}
