//! A deterministic scripted language model over a small controlled English
//! grammar. It stands in for real models when building the mini corpus:
//!
//! - rollouts: eight responses per problem with a fixed mix of defects
//!   (missing bridge assumptions, a skipped link, hedged conclusions, wrong
//!   conclusions, hallucinated premises, malformed output);
//! - soft unification: adds `A puppy is a dog.`-style bridges for words in
//!   a small synonym lexicon only;
//! - formalization: a rule-based sentence-to-LIF translator;
//! - refinement: reads the formalization and the prover messages and
//!   proposes the missing class bridge when the goal is unreachable.
//!
//! Shared by the corpus generator and the tests that re-derive the corpus.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::LazyLock;

use rand::Rng;
use regex::Regex;
use stepproof::formal::{parse_lif, Formula, Term};
use stepproof::gateway::{prompts, Completer, Completion, CompletionRequest, GatewayError};
use stepproof::premise::split_sentences;
use stepproof::rng::substream;
use stepproof::Problem;

/// One chain of class memberships: `surface ⊑ kind ⊑ kind2 ⊑ prop`.
struct Chain {
    entity: &'static str,
    kind: &'static str,
    kind2: &'static str,
    prop: &'static str,
    /// A synonym the soft-unification lexicon knows.
    synonym: &'static str,
    /// A subclass the lexicon does not know.
    rare: &'static str,
}

const CHAINS: [Chain; 8] = [
    Chain {
        entity: "Rex",
        kind: "dog",
        kind2: "mammal",
        prop: "warm",
        synonym: "puppy",
        rare: "beagle",
    },
    Chain {
        entity: "Tom",
        kind: "cat",
        kind2: "mammal",
        prop: "furry",
        synonym: "kitten",
        rare: "tabby",
    },
    Chain {
        entity: "Sam",
        kind: "father",
        kind2: "parent",
        prop: "responsible",
        synonym: "dad",
        rare: "patriarch",
    },
    Chain {
        entity: "Max",
        kind: "car",
        kind2: "vehicle",
        prop: "mechanical",
        synonym: "automobile",
        rare: "sedan",
    },
    Chain {
        entity: "Bella",
        kind: "horse",
        kind2: "animal",
        prop: "alive",
        synonym: "mare",
        rare: "stallion",
    },
    Chain {
        entity: "Leo",
        kind: "boy",
        kind2: "child",
        prop: "young",
        synonym: "lad",
        rare: "schoolboy",
    },
    Chain {
        entity: "Kiwi",
        kind: "bird",
        kind2: "animal",
        prop: "feathered",
        synonym: "chick",
        rare: "sparrow",
    },
    Chain {
        entity: "Thor",
        kind: "tool",
        kind2: "object",
        prop: "useful",
        synonym: "implement",
        rare: "hammer",
    },
];

/// Words the scripted soft-unification step knows: surface → class.
const LEXICON: [(&str, &str); 8] = [
    ("puppy", "dog"),
    ("kitten", "cat"),
    ("dad", "father"),
    ("automobile", "car"),
    ("mare", "horse"),
    ("lad", "boy"),
    ("chick", "bird"),
    ("implement", "tool"),
];

const DISTRACTORS: [&str; 4] = [
    "Every fish is wet.",
    "Every stone is heavy.",
    "Every song is loud.",
    "Every tree is tall.",
];

fn article(noun: &str) -> &'static str {
    if noun.starts_with(['a', 'e', 'i', 'o', 'u']) {
        "an"
    } else {
        "a"
    }
}

fn is_a(subject: &str, noun: &str) -> String {
    format!("{subject} is {} {noun}.", article(noun))
}

fn every_is_a(noun: &str, noun2: &str) -> String {
    format!("Every {noun} is {} {noun2}.", article(noun2))
}

fn bridge(surface: &str, kind: &str) -> String {
    let a = article(surface);
    let cap = a[..1].to_uppercase() + &a[1..];
    format!("{cap} {surface} is {} {kind}.", article(kind))
}

/// How the entity is introduced in the problem.
#[derive(Clone, Copy, PartialEq, Eq)]
enum BridgeKind {
    None,
    Synonym,
    Rare,
}

struct Blueprint {
    id: String,
    chain: &'static Chain,
    bridge: BridgeKind,
    negated: bool,
    distractor: &'static str,
}

impl Blueprint {
    fn surface(&self) -> &'static str {
        match self.bridge {
            BridgeKind::None => self.chain.kind,
            BridgeKind::Synonym => self.chain.synonym,
            BridgeKind::Rare => self.chain.rare,
        }
    }

    fn fact(&self) -> String {
        is_a(self.chain.entity, self.surface())
    }

    fn rule1(&self) -> String {
        every_is_a(self.chain.kind, self.chain.kind2)
    }

    fn rule2(&self) -> String {
        let not = if self.negated { "not " } else { "" };
        format!("Every {} is {not}{}.", self.chain.kind2, self.chain.prop)
    }

    fn middle(&self) -> String {
        is_a(self.chain.entity, self.chain.kind2)
    }

    fn conclusion(&self, flip: bool) -> String {
        let not = if self.negated != flip { "not " } else { "" };
        format!("{} is {not}{}.", self.chain.entity, self.chain.prop)
    }

    fn answer(&self, flip: bool) -> &'static str {
        if self.negated != flip {
            "False"
        } else {
            "True"
        }
    }

    fn bridge_sentence(&self) -> Option<String> {
        (self.bridge != BridgeKind::None).then(|| bridge(self.surface(), self.chain.kind))
    }

    fn problem(&self) -> Problem {
        Problem {
            id: self.id.clone(),
            premises: vec![self.fact(), self.rule1(), self.rule2(), self.distractor.to_string()],
            question: format!(
                "Is {} {}? Answer with True or False.",
                self.chain.entity, self.chain.prop
            ),
            gold_answer: Some(self.answer(false).to_string()),
        }
    }
}

fn blueprints() -> Vec<Blueprint> {
    let mut out = Vec::new();
    for (c, chain) in CHAINS.iter().enumerate() {
        for (b, bridge) in [BridgeKind::None, BridgeKind::Synonym, BridgeKind::Rare]
            .into_iter()
            .enumerate()
        {
            let i = c * 3 + b;
            out.push(Blueprint {
                id: format!("p{i:02}"),
                chain,
                bridge,
                negated: (c + b) % 2 == 1,
                distractor: DISTRACTORS[i % DISTRACTORS.len()],
            });
        }
    }
    out
}

/// The 24 problems of the mini corpus.
pub fn problems() -> Vec<Problem> {
    blueprints().iter().map(Blueprint::problem).collect()
}

struct StepText {
    premise: String,
    assumptions: String,
    conclusion: String,
}

fn render(steps: &[StepText], answer: Option<&str>) -> String {
    let mut out = String::new();
    for (i, s) in steps.iter().enumerate() {
        out.push_str(&format!("Step {}:\n", i + 1));
        out.push_str(&format!("Premise: {}\n", s.premise));
        if s.assumptions.is_empty() {
            out.push_str("Soft Unification:\n");
        } else {
            out.push_str(&format!("Soft Unification: {}\n", s.assumptions));
        }
        out.push_str(&format!("Conclusion: {}\n\n", s.conclusion));
    }
    if let Some(a) = answer {
        out.push_str(&format!("Final answer: [{a}]\n"));
    }
    out
}

/// The response variants, indexed by `(sample_index + problem number) % 8`.
fn rollout_text(bp: &Blueprint, variant: usize) -> String {
    let bridge = bp.bridge_sentence().unwrap_or_default();
    let two_step = |bridge: &str, conclusion: String, extra: &str| {
        vec![
            StepText {
                premise: format!("{} {}", bp.fact(), bp.rule1()),
                assumptions: bridge.to_string(),
                conclusion: bp.middle(),
            },
            StepText {
                premise: format!("{} {}{extra}", bp.middle(), bp.rule2()),
                assumptions: String::new(),
                conclusion,
            },
        ]
    };
    match variant {
        // Correct, bridge stated.
        0 => render(&two_step(&bridge, bp.conclusion(false), ""), Some(bp.answer(false))),
        // Correct answer, bridge left implicit; without a bridge to omit the
        // first rule is skipped instead.
        1 | 7 if bp.bridge == BridgeKind::None => render(
            &[StepText {
                premise: format!("{} {}", bp.fact(), bp.rule2()),
                assumptions: String::new(),
                conclusion: bp.conclusion(false),
            }],
            Some(bp.answer(false)),
        ),
        1 | 7 => render(&two_step("", bp.conclusion(false), ""), Some(bp.answer(false))),
        // One step over all premises.
        2 => render(
            &[StepText {
                premise: format!("{} {} {}", bp.fact(), bp.rule1(), bp.rule2()),
                assumptions: bridge.clone(),
                conclusion: bp.conclusion(false),
            }],
            Some(bp.answer(false)),
        ),
        // Hedged conclusion: not formalizable.
        3 => {
            let hedged = bp.conclusion(false).replacen(" is ", " is probably ", 1);
            render(&two_step(&bridge, hedged, ""), Some(bp.answer(false)))
        }
        // Wrong conclusion and answer.
        4 => render(&two_step(&bridge, bp.conclusion(true), ""), Some(bp.answer(true))),
        // Hallucinated premise.
        5 => {
            let extra = format!(" Every {} is friendly.", bp.chain.kind2);
            render(&two_step(&bridge, bp.conclusion(false), &extra), Some(bp.answer(false)))
        }
        // Malformed: no final answer.
        _ => render(&two_step(&bridge, bp.conclusion(false), ""), None),
    }
}

/// Whitespace-preserving tokens whose concatenation is `text`.
fn tokenize(text: &str) -> Vec<String> {
    static TOKEN: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\S+\s*|\s+").unwrap());
    TOKEN.find_iter(text).map(|m| m.as_str().to_string()).collect()
}

fn token_probs(text: &str, key: &str, variant: usize) -> Vec<(String, f64)> {
    let mut rng = substream(7, "scripted-tokens", key);
    tokenize(text)
        .into_iter()
        .map(|t| {
            let p = match (variant, t.trim()) {
                (3, "probably") => 0.35,
                (3, _) => rng.random_range(0.55..0.8),
                (4, _) => rng.random_range(0.5..0.85),
                _ => rng.random_range(0.8..0.99),
            };
            (t, (p * 1e4_f64).round() / 1e4)
        })
        .collect()
}

/// Sentence → LIF formula in the controlled grammar, or `None`.
fn formalize_sentence(sentence: &str) -> Option<String> {
    static RULES: LazyLock<Vec<(Regex, &'static str)>> = LazyLock::new(|| {
        [
            (r"^(?:A|An) (\w+) is (?:a|an) (\w+)$", "forall X. ($1(X) -> $2(X))"),
            (r"^Every (\w+) is (?:a|an) (\w+)$", "forall X. ($1(X) -> $2(X))"),
            (r"^Every (\w+) is not (\w+)$", "forall X. ($1(X) -> ~$2(X))"),
            (r"^Every (\w+) is (\w+)$", "forall X. ($1(X) -> $2(X))"),
            (r"^([A-Z]\w*) is (?:a|an) (\w+)$", "$2($1)"),
            (r"^([A-Z]\w*) is not (\w+)$", "~$2($1)"),
            (r"^([A-Z]\w*) is (\w+)$", "$2($1)"),
        ]
        .into_iter()
        .map(|(re, tpl)| (Regex::new(re).unwrap(), tpl))
        .collect()
    });
    let s = sentence.trim().trim_end_matches('.');
    RULES.iter().find_map(|(re, tpl)| {
        let caps = re.captures(s)?;
        Some(
            tpl.replace("$1", &caps[1].to_lowercase())
                .replace("$2", &caps[2].to_lowercase()),
        )
    })
}

fn sentences(text: &str) -> Vec<String> {
    if text.trim() == "(none)" {
        return Vec::new();
    }
    split_sentences(text).sentences
}

/// Like a careless translator, an untranslatable sentence is copied verbatim.
fn lif_line(label: &str, sentence: &str) -> String {
    let body = formalize_sentence(sentence).unwrap_or_else(|| sentence.trim_end_matches('.').to_lowercase());
    format!("{label}: {body}")
}

fn field<'a>(text: &'a str, label: &str) -> &'a str {
    text.lines()
        .rev()
        .find_map(|l| l.strip_prefix(label))
        .unwrap_or("")
        .trim()
}

fn formalize_reply(prompt: &str) -> String {
    let tail = &prompt[prompt.rfind("\nPremise: ").unwrap_or(0)..];
    let mut lines = Vec::new();
    for s in sentences(field(tail, "Premise: "))
        .iter()
        .chain(&sentences(field(tail, "Assumptions: ")))
    {
        lines.push(lif_line("axiom", s));
    }
    lines.push(lif_line("goal", field(tail, "Conclusion: ")));
    lines.join("\n") + "\n"
}

/// Bridges for lexicon words introduced by `E is a w` with `w` not already
/// a rule antecedent.
fn soft_unify_reply(prompt: &str) -> String {
    static MEMBER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^[A-Z]\w* is (?:a|an) (\w+)\.?$").unwrap());
    static RULE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^Every (\w+) is").unwrap());
    let premise = sentences(field(prompt, "Step premise: "));
    let assumptions = sentences(field(prompt, "Current assumptions: "));
    let all: Vec<&String> = premise.iter().chain(&assumptions).collect();
    let antecedents: BTreeSet<String> = all
        .iter()
        .filter_map(|s| RULE.captures(s).map(|c| c[1].to_string()))
        .collect();
    let mut out = Vec::new();
    for s in &all {
        let Some(c) = MEMBER.captures(s) else { continue };
        let word = &c[1];
        if antecedents.contains(word) {
            continue;
        }
        if let Some((_, class)) = LEXICON.iter().find(|(w, _)| *w == word) {
            let b = bridge(word, class);
            if !assumptions.contains(&b) {
                out.push(b);
            }
        }
    }
    out.join("\n")
}

fn unary(f: &Formula) -> Option<(&str, &Term)> {
    match f {
        Formula::Atom { pred, args } if args.len() == 1 => Some((pred, &args[0])),
        Formula::Not(inner) => unary(inner),
        _ => None,
    }
}

/// When the prover reports the goal unreachable, links the entity's class to
/// a rule antecedent from which the goal predicate is reachable.
fn refine_reply(prompt: &str) -> String {
    let current = sentences(field(prompt, "Current assumptions: "));
    let lif = prompt
        .split_once("\nFormalization:\n")
        .and_then(|(_, rest)| rest.split_once("\nProver messages:\n"))
        .map(|(lif, _)| lif)
        .unwrap_or("");
    let diagnostics = prompt.split_once("\nProver messages:\n").map(|(_, d)| d).unwrap_or("");
    let keep = current.join("\n");
    if !diagnostics.contains("not entailed") {
        return keep;
    }
    let Ok(theory) = parse_lif(lif) else { return keep };
    let mut classes = BTreeSet::new();
    let mut edges: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for ax in &theory.axioms {
        match ax {
            Formula::ForAll(_, body) => {
                if let Formula::Implies(a, b) = body.as_ref() {
                    if let (Some((pa, _)), Some((pb, _))) = (unary(a), unary(b)) {
                        edges.entry(pa.to_string()).or_default().insert(pb.to_string());
                    }
                }
            }
            f => {
                if let Some((p, Term::Const(_))) = unary(f) {
                    classes.insert(p.to_string());
                }
            }
        }
    }
    let reach = |from: &str| {
        let mut seen = BTreeSet::from([from.to_string()]);
        let mut todo = vec![from.to_string()];
        while let Some(p) = todo.pop() {
            for q in edges.get(&p).into_iter().flatten() {
                if seen.insert(q.clone()) {
                    todo.push(q.clone());
                }
            }
        }
        seen
    };
    let Some((goal, _)) = unary(&theory.goal) else {
        return keep;
    };
    if classes.iter().any(|c| reach(c).contains(goal)) {
        return keep;
    }
    let target = edges.keys().find(|a| reach(a).contains(goal) && !classes.contains(*a));
    match (classes.iter().next(), target) {
        (Some(c), Some(a)) => {
            let mut out = current;
            out.push(bridge(c, a));
            out.join("\n")
        }
        _ => keep,
    }
}

/// The scripted model; model tags only decide whether token probabilities
/// are reported (`model-a` does, every other tag does not).
pub struct ScriptedModel {
    blueprints: Vec<Blueprint>,
}

impl Default for ScriptedModel {
    fn default() -> Self {
        Self {
            blueprints: blueprints(),
        }
    }
}

impl Completer for ScriptedModel {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, GatewayError> {
        let prompt = &request.rendered_prompt;
        let text = match request.prompt_id.as_str() {
            prompts::ROLLOUT => {
                let premises = field(prompt, "Premises: ");
                let (n, bp) = self
                    .blueprints
                    .iter()
                    .enumerate()
                    .find(|(_, s)| s.problem().premises.join(" ") == premises)
                    .ok_or_else(|| GatewayError::BadResponse(format!("unknown problem: {premises}")))?;
                let variant = (request.sample_index as usize + n) % 8;
                let text = rollout_text(bp, variant);
                let probs = (request.want_token_probs && request.model_tag == "model-a")
                    .then(|| token_probs(&text, &format!("{}/{}", bp.id, request.sample_index), variant));
                return Ok(Completion {
                    text,
                    token_probs: probs,
                });
            }
            prompts::SOFT_UNIFY => soft_unify_reply(prompt),
            prompts::FORMALIZE => formalize_reply(prompt),
            prompts::REFINE => refine_reply(prompt),
            other => return Err(GatewayError::BadResponse(format!("unscripted prompt {other}"))),
        };
        Ok(Completion {
            text,
            token_probs: None,
        })
    }
}
