//! Template grammar for short explanatory sentences.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AnnotatedSentence, Role, Span};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    IsA,
    Requires,
    Causes,
    Means,
    IfThen,
    Can,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::IsA,
        Family::Requires,
        Family::Causes,
        Family::Means,
        Family::IfThen,
        Family::Can,
    ];

    pub fn topic(self) -> &'static str {
        match self {
            Family::IsA => "is-a",
            Family::Requires => "requires",
            Family::Causes => "cause",
            Family::Means => "mean",
            Family::IfThen => "if-then",
            Family::Can => "can",
        }
    }

    pub fn from_topic(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.topic() == s)
    }
}

/// (hyponym, hypernym) edges; multi-word names are space separated.
const TAXONOMY: &[(&str, &str)] = &[
    ("shark", "fish"),
    ("salmon", "fish"),
    ("trout", "fish"),
    ("tuna", "fish"),
    ("cod", "fish"),
    ("fish", "aquatic animal"),
    ("whale", "aquatic animal"),
    ("dolphin", "aquatic animal"),
    ("aquatic animal", "animal"),
    ("sparrow", "bird"),
    ("robin", "bird"),
    ("hawk", "bird"),
    ("pigeon", "bird"),
    ("bird", "animal"),
    ("dog", "mammal"),
    ("cat", "mammal"),
    ("horse", "mammal"),
    ("cow", "mammal"),
    ("deer", "mammal"),
    ("bear", "mammal"),
    ("rabbit", "mammal"),
    ("mammal", "animal"),
    ("bee", "insect"),
    ("beetle", "insect"),
    ("moth", "insect"),
    ("butterfly", "insect"),
    ("insect", "animal"),
    ("animal", "living thing"),
    ("cedar", "tree"),
    ("pine", "tree"),
    ("maple", "tree"),
    ("birch", "tree"),
    ("tree", "plant"),
    ("rose", "flower"),
    ("daisy", "flower"),
    ("tulip", "flower"),
    ("flower", "plant"),
    ("plant", "living thing"),
    ("copper", "metal"),
    ("iron", "metal"),
    ("steel", "metal"),
    ("silver", "metal"),
    ("gold", "metal"),
    ("metal", "material"),
    ("granite", "rock"),
    ("basalt", "rock"),
    ("marble", "rock"),
    ("rock", "material"),
    ("wood", "material"),
];

const NON_LIVING: &[&str] = &[
    "copper", "iron", "steel", "silver", "gold", "metal", "granite", "basalt", "marble", "rock", "wood",
    "material",
];

const RESOURCES: &[&str] = &[
    "water",
    "sunlight",
    "food",
    "energy",
    "oxygen",
    "nutrients",
    "something",
    "air",
    "shelter",
    "soil",
    "light",
    "warmth",
];

const REQ_VERBS: &[&str] = &["grow", "live", "survive", "move", "reproduce", "breathe"];

const PROCESSES: &[&str] = &[
    "heat",
    "friction",
    "gravity",
    "sunlight",
    "erosion",
    "evaporation",
    "condensation",
    "melting",
    "freezing",
    "rain",
    "wind",
    "pressure",
    "pollution",
    "drought",
    "flooding",
    "weathering",
    "deposition",
    "combustion",
    "photosynthesis",
    "respiration",
    "water",
    "something",
    "temperature",
    "energy",
    "motion",
];

const CHANGES: &[&str] = &["increases", "decreases"];

const VERBS: &[&str] = &[
    "swim", "move", "run", "fly", "walk", "climb", "jump", "eat", "consume", "hunt", "grow", "develop",
    "breathe", "respire", "dig", "hide", "sing", "communicate",
];

/// (specific, general) verb pairs for `to A means to B`.
const VERB_MEANINGS: &[(&str, &str)] = &[
    ("swim", "move"),
    ("run", "move"),
    ("fly", "move"),
    ("walk", "move"),
    ("climb", "move"),
    ("jump", "move"),
    ("dig", "move"),
    ("eat", "consume"),
    ("hunt", "eat"),
    ("grow", "develop"),
    ("breathe", "respire"),
    ("sing", "communicate"),
];

#[derive(Clone, Copy, Debug)]
enum Pool {
    Taxon,
    Organism,
    Resource,
    ReqVerb,
    Process,
    Change,
    Verb,
}

impl Pool {
    fn phrases(self) -> Vec<&'static str> {
        match self {
            Pool::Taxon => taxon_names(),
            Pool::Organism => taxon_names()
                .into_iter()
                .filter(|n| !NON_LIVING.contains(n))
                .collect(),
            Pool::Resource => RESOURCES.to_vec(),
            Pool::ReqVerb => REQ_VERBS.to_vec(),
            Pool::Process => PROCESSES.to_vec(),
            Pool::Change => CHANGES.to_vec(),
            Pool::Verb => VERBS.to_vec(),
        }
    }
}

fn taxon_names() -> Vec<&'static str> {
    let mut names: Vec<&'static str> = Vec::new();
    for &(a, b) in TAXONOMY {
        for n in [a, b] {
            if !names.contains(&n) {
                names.push(n);
            }
        }
    }
    names
}

#[derive(Clone, Copy, Debug)]
enum Piece {
    Lit(&'static str, Role),
    Slot(Pool, Role),
}

use Piece::{Lit, Slot};

struct Template {
    id: usize,
    family: Family,
    pieces: &'static [Piece],
}

const TEMPLATES: &[Template] = &[
    Template {
        id: 0,
        family: Family::IsA,
        pieces: &[
            Lit("a", Role::O),
            Slot(Pool::Taxon, Role::Arg1),
            Lit("is", Role::Pred),
            Lit("a", Role::O),
            Lit("kind", Role::O),
            Lit("of", Role::O),
            Slot(Pool::Taxon, Role::Arg2),
        ],
    },
    Template {
        id: 1,
        family: Family::Requires,
        pieces: &[
            Lit("a", Role::O),
            Slot(Pool::Organism, Role::Arg0),
            Lit("requires", Role::Pred),
            Slot(Pool::Resource, Role::Arg1),
            Lit("to", Role::O),
            Slot(Pool::ReqVerb, Role::Arg2),
        ],
    },
    Template {
        id: 2,
        family: Family::Causes,
        pieces: &[
            Slot(Pool::Process, Role::Arg0),
            Lit("causes", Role::Pred),
            Slot(Pool::Process, Role::Arg1),
        ],
    },
    Template {
        id: 3,
        family: Family::Means,
        pieces: &[
            Slot(Pool::Process, Role::Arg0),
            Lit("means", Role::Pred),
            Slot(Pool::Process, Role::Arg1),
        ],
    },
    Template {
        id: 4,
        family: Family::Means,
        pieces: &[
            Lit("to", Role::O),
            Slot(Pool::Verb, Role::Arg0),
            Lit("means", Role::Pred),
            Lit("to", Role::O),
            Slot(Pool::Verb, Role::Arg1),
        ],
    },
    Template {
        id: 5,
        family: Family::IfThen,
        pieces: &[
            Lit("if", Role::O),
            Slot(Pool::Process, Role::Arg0),
            Slot(Pool::Change, Role::Pred),
            Lit("then", Role::O),
            Slot(Pool::Process, Role::Arg1),
            Slot(Pool::Change, Role::Pred),
        ],
    },
    Template {
        id: 6,
        family: Family::Can,
        pieces: &[
            Lit("a", Role::O),
            Slot(Pool::Organism, Role::Arg0),
            Lit("can", Role::Mod),
            Slot(Pool::Verb, Role::Pred),
        ],
    },
    Template {
        id: 7,
        family: Family::Can,
        pieces: &[
            Lit("a", Role::O),
            Slot(Pool::Organism, Role::Arg0),
            Lit("can", Role::Mod),
            Lit("not", Role::Neg),
            Slot(Pool::Verb, Role::Pred),
        ],
    },
    Template {
        id: 8,
        family: Family::Can,
        pieces: &[
            Lit("a", Role::O),
            Slot(Pool::Organism, Role::Arg0),
            Lit("can", Role::Mod),
            Slot(Pool::Verb, Role::Pred),
            Lit("and", Role::O),
            Slot(Pool::Verb, Role::Pred),
        ],
    },
];

/// Every word the grammar can emit, in a fixed order.
pub fn all_words() -> Vec<&'static str> {
    let mut words: Vec<&'static str> = Vec::new();
    let mut push = |w: &'static str| {
        for part in w.split(' ') {
            if !words.contains(&part) {
                words.push(part);
            }
        }
    };
    for t in TEMPLATES {
        for p in t.pieces {
            match *p {
                Lit(w, _) => push(w),
                Slot(pool, _) => pool.phrases().into_iter().for_each(&mut push),
            }
        }
    }
    words
}

fn render(template: &Template, fills: &[&str]) -> AnnotatedSentence {
    let mut tokens = Vec::new();
    let mut roles = Vec::new();
    let mut fills = fills.iter();
    for p in template.pieces {
        let (text, role) = match *p {
            Lit(w, r) => (w, r),
            Slot(_, r) => (*fills.next().expect("one fill per slot"), r),
        };
        for w in text.split(' ') {
            tokens.push(w.to_string());
            roles.push(role);
        }
    }
    AnnotatedSentence {
        tokens,
        roles,
        template_id: template.id,
        family: template.family,
    }
}

/// Renders template `template_id` with the given slot fills.
pub fn sentence(template_id: usize, fills: &[&str]) -> Option<AnnotatedSentence> {
    let t = TEMPLATES.iter().find(|t| t.id == template_id)?;
    let slots = t.pieces.iter().filter(|p| matches!(p, Slot(..))).count();
    (slots == fills.len()).then(|| render(t, fills))
}

fn ancestors(name: &'static str) -> Vec<&'static str> {
    let mut out = Vec::new();
    let mut frontier = vec![name];
    while let Some(n) = frontier.pop() {
        for &(a, b) in TAXONOMY {
            if a == n && !out.contains(&b) {
                out.push(b);
                frontier.push(b);
            }
        }
    }
    out
}

fn sample_family<R: Rng>(family: Family, rng: &mut R) -> AnnotatedSentence {
    let pick = |pool: &[&'static str], rng: &mut R| *pool.choose(rng).expect("nonempty pool");
    match family {
        Family::IsA => {
            // any (descendant, ancestor) pair
            let names: Vec<&'static str> = taxon_names()
                .into_iter()
                .filter(|n| !ancestors(n).is_empty())
                .collect();
            let child = pick(&names, rng);
            let parent = pick(&ancestors(child), rng);
            render(&TEMPLATES[0], &[child, parent])
        }
        Family::Requires => {
            let fills = [
                pick(&Pool::Organism.phrases(), rng),
                pick(RESOURCES, rng),
                pick(REQ_VERBS, rng),
            ];
            render(&TEMPLATES[1], &fills)
        }
        Family::Causes | Family::Means => {
            if family == Family::Means && rng.random_bool(0.3) {
                let (a, b) = *VERB_MEANINGS.choose(rng).expect("nonempty");
                return render(&TEMPLATES[4], &[a, b]);
            }
            let a = pick(PROCESSES, rng);
            let mut b = pick(PROCESSES, rng);
            while b == a {
                b = pick(PROCESSES, rng);
            }
            let t = if family == Family::Causes { &TEMPLATES[2] } else { &TEMPLATES[3] };
            render(t, &[a, b])
        }
        Family::IfThen => {
            let a = pick(PROCESSES, rng);
            let mut b = pick(PROCESSES, rng);
            while b == a {
                b = pick(PROCESSES, rng);
            }
            render(&TEMPLATES[5], &[a, pick(CHANGES, rng), b, pick(CHANGES, rng)])
        }
        Family::Can => {
            let who = pick(&Pool::Organism.phrases(), rng);
            let verb = pick(VERBS, rng);
            let u: f64 = rng.random();
            if u < 0.25 {
                render(&TEMPLATES[7], &[who, verb])
            } else if u < 0.4 {
                let mut other = pick(VERBS, rng);
                while other == verb {
                    other = pick(VERBS, rng);
                }
                render(&TEMPLATES[8], &[who, verb, other])
            } else {
                render(&TEMPLATES[6], &[who, verb])
            }
        }
    }
}

/// `count` sentences, a pure function of `seed`. Families are drawn
/// uniformly.
pub fn generate_sentences(seed: u64, count: usize) -> Vec<AnnotatedSentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let family = *Family::ALL.choose(&mut rng).expect("nonempty");
            sample_family(family, &mut rng)
        })
        .collect()
}

/// Matches tokens against every template; the first full match wins.
pub fn parse_sentence<S: AsRef<str>>(tokens: &[S]) -> Option<AnnotatedSentence> {
    let toks: Vec<&str> = tokens.iter().map(AsRef::as_ref).collect();
    TEMPLATES.iter().find_map(|t| {
        let mut fills = Vec::new();
        match_pieces(t.pieces, &toks, &mut fills).then(|| render(t, &fills))
    })
}

fn match_pieces<'a>(pieces: &[Piece], toks: &[&str], fills: &mut Vec<&'a str>) -> bool
where
    'static: 'a,
{
    let Some((first, rest)) = pieces.split_first() else {
        return toks.is_empty();
    };
    match *first {
        Lit(w, _) => toks.first() == Some(&w) && match_pieces(rest, &toks[1..], fills),
        Slot(pool, _) => {
            for phrase in pool.phrases() {
                let words: Vec<&str> = phrase.split(' ').collect();
                if toks.len() >= words.len() && toks[..words.len()] == words[..] {
                    fills.push(phrase);
                    if match_pieces(rest, &toks[words.len()..], fills) {
                        return true;
                    }
                    fills.pop();
                }
            }
            false
        }
    }
}

/// Shared term between two premises and the span that replaces it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Anchor {
    /// Span of P2 holding the shared term.
    pub target: Span,
    /// Span of P1 whose content is written into P2.
    pub replacement: Span,
}

/// Finds the term shared by the premises. The shared term is an argument
/// of P1; it must occur in P2 as an argument (`verb == false`) or as the
/// predicate (`verb == true`) and is replaced by P1's other argument. P1's
/// arguments are tried last to first. Identical premises anchor each span
/// on itself.
pub fn find_anchor(p1: &AnnotatedSentence, p2: &AnnotatedSentence, verb: bool) -> Option<Anchor> {
    let p1_args: Vec<Span> = p1.spans().into_iter().filter(|s| s.role.is_argument()).collect();
    let p2_targets: Vec<Span> = p2
        .spans()
        .into_iter()
        .filter(|s| if verb { s.role == Role::Pred } else { s.role.is_argument() })
        .collect();
    if p1.tokens == p2.tokens {
        let t = p2_targets.into_iter().next()?;
        return Some(Anchor {
            replacement: t.clone(),
            target: t,
        });
    }
    for shared in p1_args.iter().rev() {
        let Some(other) = p1_args
            .iter()
            .find(|s| *s != shared && p1.span_tokens(s) != p1.span_tokens(shared))
        else {
            continue;
        };
        if let Some(target) = p2_targets
            .iter()
            .find(|t| p2.span_tokens(t) == p1.span_tokens(shared))
        {
            return Some(Anchor {
                target: target.clone(),
                replacement: other.clone(),
            });
        }
    }
    None
}

/// Token-level substitution: the expected conclusion of the premises.
pub fn substitution_conclusion(
    p1: &AnnotatedSentence,
    p2: &AnnotatedSentence,
    verb: bool,
) -> Option<(Anchor, Vec<String>)> {
    let anchor = find_anchor(p1, p2, verb)?;
    let mut tokens = p2.tokens[..anchor.target.start].to_vec();
    tokens.extend_from_slice(p1.span_tokens(&anchor.replacement));
    tokens.extend_from_slice(&p2.tokens[anchor.target.end..]);
    Some((anchor, tokens))
}

pub fn arg_sub_conclusion(p1: &AnnotatedSentence, p2: &AnnotatedSentence) -> Option<Vec<String>> {
    substitution_conclusion(p1, p2, false).map(|(_, t)| t)
}

pub fn verb_sub_conclusion(p1: &AnnotatedSentence, p2: &AnnotatedSentence) -> Option<Vec<String>> {
    substitution_conclusion(p1, p2, true).map(|(_, t)| t)
}

/// Further specification: P1's tokens after the argument it shares with
/// P2 are appended to P2. Returns the shared P1 span, the appended P1 span
/// and the conclusion.
pub fn further_spec_conclusion(
    p1: &AnnotatedSentence,
    p2: &AnnotatedSentence,
) -> Option<(Span, Span, Vec<String>)> {
    let p2_args: Vec<Span> = p2.spans().into_iter().filter(|s| s.role.is_argument()).collect();
    let shared = p1.spans().into_iter().filter(|s| s.role.is_argument()).find(|s| {
        s.end < p1.len() && p2_args.iter().any(|t| p2.span_tokens(t) == p1.span_tokens(s))
    })?;
    let tail = Span {
        role: Role::O,
        start: shared.end,
        end: p1.len(),
    };
    let mut tokens = p2.tokens.clone();
    tokens.extend_from_slice(p1.span_tokens(&tail));
    Some((shared, tail, tokens))
}

/// Conjunction of two premises sharing a frame: the differing segment of
/// P2, then "and", then the differing segment of P1. Returns the common
/// prefix and suffix lengths with the conclusion.
pub fn conjunction_conclusion(p1: &AnnotatedSentence, p2: &AnnotatedSentence) -> Option<(usize, usize, Vec<String>)> {
    let (a, b) = (&p1.tokens, &p2.tokens);
    let max = a.len().min(b.len());
    let prefix = (0..max).take_while(|&i| a[i] == b[i]).count();
    let suffix = (0..max - prefix)
        .take_while(|&i| a[a.len() - 1 - i] == b[b.len() - 1 - i])
        .count();
    if prefix + suffix == 0 || prefix + suffix >= a.len() || prefix + suffix >= b.len() {
        return None;
    }
    let mut tokens = b[..b.len() - suffix].to_vec();
    tokens.push("and".to_string());
    tokens.extend_from_slice(&a[prefix..a.len() - suffix]);
    tokens.extend_from_slice(&b[b.len() - suffix..]);
    Some((prefix, suffix, tokens))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn shark_is_a_kind_of_fish() {
        let s = sentence(0, &["shark", "fish"]).unwrap();
        assert_eq!(s.text(), "a shark is a kind of fish");
        use Role::*;
        assert_eq!(s.roles, vec![O, Arg1, Pred, O, O, O, Arg2]);
        assert_eq!(s.topic(), "is-a");
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(generate_sentences(7, 200), generate_sentences(7, 200));
        assert_ne!(generate_sentences(7, 200), generate_sentences(8, 200));
    }

    #[test]
    fn every_family_is_well_represented() {
        let mut counts: HashMap<Family, usize> = HashMap::new();
        for s in generate_sentences(3, 1000) {
            *counts.entry(s.family).or_default() += 1;
        }
        for f in Family::ALL {
            assert!(counts.get(&f).copied().unwrap_or(0) >= 50, "{f:?}: {counts:?}");
        }
    }

    #[test]
    fn vocabulary_is_small() {
        assert!(all_words().len() <= 300);
    }

    #[test]
    fn invariants_hold_on_generated_corpus() {
        for s in generate_sentences(11, 500) {
            assert_eq!(s.tokens.len(), s.roles.len());
            assert!(s.roles.contains(&Role::Pred));
            let parsed = parse_sentence(&s.tokens).unwrap();
            assert_eq!(parsed, s);
        }
    }

    #[test]
    fn roles_are_fixed_per_template_slot() {
        let mut seen: HashMap<usize, Vec<Role>> = HashMap::new();
        for s in generate_sentences(5, 2000) {
            let shape: Vec<Role> = s.spans().iter().map(|sp| sp.role).collect();
            let prev = seen.entry(s.template_id).or_insert_with(|| shape.clone());
            assert_eq!(prev, &shape, "{}", s.text());
        }
    }

    #[test]
    fn argument_substitution_oracle() {
        let p1 = sentence(0, &["shark", "fish"]).unwrap();
        let p2 = sentence(0, &["fish", "aquatic animal"]).unwrap();
        assert_eq!(arg_sub_conclusion(&p1, &p2).unwrap().join(" "), "a shark is a kind of aquatic animal");
        assert_eq!(arg_sub_conclusion(&p1, &p1).unwrap(), p1.tokens);
    }

    #[test]
    fn verb_substitution_oracle() {
        let p1 = sentence(4, &["swim", "move"]).unwrap();
        let p2 = sentence(6, &["fish", "move"]).unwrap();
        assert_eq!(verb_sub_conclusion(&p1, &p2).unwrap().join(" "), "a fish can swim");
    }

    #[test]
    fn unrelated_premises_have_no_anchor() {
        let p1 = sentence(0, &["shark", "fish"]).unwrap();
        let p2 = sentence(2, &["heat", "evaporation"]).unwrap();
        assert!(find_anchor(&p1, &p2, false).is_none());
    }

    #[test]
    fn conjunction_joins_differing_predicates() {
        let p1 = sentence(6, &["bird", "fly"]).unwrap();
        let p2 = sentence(6, &["bird", "swim"]).unwrap();
        let (prefix, suffix, out) = conjunction_conclusion(&p1, &p2).unwrap();
        assert_eq!((prefix, suffix), (3, 0));
        assert_eq!(out.join(" "), "a bird can swim and fly");
        assert_eq!(parse_sentence(&out).unwrap().template_id, 8);
        assert!(conjunction_conclusion(&p1, &p1).is_none());
    }

    #[test]
    fn further_spec_appends_p1_tail() {
        let p1 = sentence(1, &["bird", "water", "live"]).unwrap();
        let p2 = sentence(2, &["heat", "water"]).unwrap();
        let (_, tail, out) = further_spec_conclusion(&p1, &p2).unwrap();
        assert_eq!(p1.span_tokens(&tail).join(" "), "to live");
        assert_eq!(out.join(" "), "heat causes water to live");
    }
}
