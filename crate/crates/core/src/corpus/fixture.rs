//! Deterministic synthetic corpus for desk-scale runs.
//!
//! Every response is a topical base statement decorated with a subset of the
//! four [`QUALITY_CUES`]. The number of cues a response carries is its planted
//! quality (cues / 4), which gives the preference tooling a ground truth that a
//! feature-based scorer can recover.

use super::{CorpusError, DialogueContext, O2mSample, PreferenceLabels, PreferencePair, ResponseSet};
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Marker tokens of the planted quality cues. None of them occurs in the
/// base pools.
pub const QUALITY_CUES: [&str; 4] = ["honestly", "because", "recommend", "yourself"];

struct Topic {
    lines: &'static [&'static str],
    bases: &'static [&'static str],
    reasons: &'static [&'static str],
}

const TOPICS: &[Topic] = &[
    Topic {
        lines: &[
            "Do you have any plans for the weekend?",
            "Not really, I was thinking of staying home.",
            "The weather is supposed to be lovely on Saturday.",
            "Maybe I should get outside for a change.",
            "We could go hiking near the lake.",
            "That sounds nice, but I am a little out of shape.",
        ],
        bases: &[
            "I would love to join you at the lake on Saturday",
            "A slow walk along the shore could be a good start",
            "Staying home with a good book is also tempting",
            "We could pack a picnic and take breaks whenever we like",
            "My cousin rents kayaks near the north trail",
            "Let me check my schedule tonight and get back to you",
            "Short trails are perfect for getting back into shape",
            "The sunrise over the water is worth the early alarm",
        ],
        reasons: &[
            "fresh air always lifts my mood",
            "it helps me clear my head after a long week",
            "the trails there are rarely crowded",
            "moving a little makes the whole weekend feel longer",
        ],
    },
    Topic {
        lines: &[
            "What should we cook for dinner tonight?",
            "I bought some fresh tomatoes this morning.",
            "We could make a pasta sauce with them.",
            "I made pasta twice this week already.",
            "How about a simple salad and grilled fish instead?",
            "I am not sure the fish at the market was fresh.",
        ],
        bases: &[
            "A tomato soup with toasted bread would be cozy tonight",
            "We could stuff the tomatoes with rice and herbs",
            "Grilled vegetables with a little garlic never disappoint",
            "Ordering from the new noodle place is another option",
            "I can make a quick omelette with the tomatoes and cheese",
            "Let us buy the fish from the harbor stall next time",
            "A cold gazpacho suits this warm evening",
            "Friends of mine swear by a slow roasted tomato tart",
        ],
        reasons: &[
            "it takes less than twenty minutes",
            "the tomatoes are at their best right now",
            "it leaves plenty of leftovers for lunch",
            "it is light enough for a warm night",
        ],
    },
    Topic {
        lines: &[
            "I finally booked my trip to Japan.",
            "That is wonderful, when are you leaving?",
            "In early April, right at cherry blossom season.",
            "The cities will be packed with tourists then.",
            "I know, but I have wanted to see the blossoms for years.",
            "Where are you planning to stay?",
        ],
        bases: &[
            "Kyoto early in the morning is magical before the crowds arrive",
            "A small inn in the countryside could be a calm break",
            "Make sure to reserve train seats ahead of time",
            "The blossoms along the river in Tokyo are stunning at night",
            "Try to spend a day in Nara with the friendly deer",
            "I still have a list of ramen shops from my own trip",
            "Packing light makes the train transfers much easier",
            "April evenings can be chilly so bring a warm jacket",
        ],
        reasons: &[
            "the temples open at dawn",
            "local guides know the quiet viewing spots",
            "seats sell out quickly in spring",
            "the food alone justifies the journey",
        ],
    },
    Topic {
        lines: &[
            "My manager asked me to lead the new project.",
            "Congratulations, that is a big step.",
            "Thanks, but I am nervous about managing the team.",
            "Everyone feels that way at first.",
            "I just do not want to let anyone down.",
            "What part worries you the most?",
        ],
        bases: &[
            "Setting clear weekly goals will give the team a rhythm",
            "Asking each person what they need goes a long way",
            "You were chosen for a reason and it shows trust",
            "A short kickoff meeting can settle a lot of nerves",
            "Writing down decisions keeps everyone on the same page",
            "It is fine to admit when you are still learning",
            "Pairing the newer members with veterans helps them grow",
            "Celebrating the small wins keeps the energy up",
        ],
        reasons: &[
            "people follow leaders who listen",
            "uncertainty fades once plans are visible",
            "confidence grows with every small success",
            "teams relax when expectations are clear",
        ],
    },
    Topic {
        lines: &[
            "Have you seen the new science fiction film?",
            "Not yet, is it any good?",
            "The visuals are incredible but the story drags.",
            "I usually care more about the story.",
            "Then you might find the middle part slow.",
            "Maybe I will wait until it is streaming.",
        ],
        bases: &[
            "Waiting for the streaming release sounds sensible",
            "The big screen really does the space scenes justice",
            "The soundtrack alone might carry you through the slow part",
            "I prefer older films where the plot comes first",
            "We could watch it together and judge for ourselves",
            "The book it is based on tells the story much better",
            "Critics seem split on the ending",
            "A cheap matinee ticket lowers the risk",
        ],
        reasons: &[
            "the effects lose little on a television",
            "the director rarely disappoints",
            "good company makes any film better",
            "afternoon shows are half the price",
        ],
    },
    Topic {
        lines: &[
            "It has been raining all week.",
            "I know, my garden is completely flooded.",
            "At least the plants are getting plenty of water.",
            "Too much water is ruining my tomatoes though.",
            "Maybe you could build a small drainage ditch.",
            "I have no idea where to start with that.",
        ],
        bases: &[
            "Raised beds keep the roots out of standing water",
            "A local garden center can suggest a simple fix",
            "Gravel along the edges helps the water drain away",
            "Moving the pots under the roof might save the tomatoes",
            "My neighbor dug a ditch last spring in one afternoon",
            "The forecast says the sun returns on Thursday",
            "Mulch can protect the soil from washing away",
            "Let me lend you my spade this weekend",
        ],
        reasons: &[
            "it only takes a few boards",
            "they see this problem every year",
            "roots rot quickly when they stay wet",
            "dry weather is finally on the way",
        ],
    },
    Topic {
        lines: &[
            "Did you watch the match last night?",
            "Of course, what a finish!",
            "I could not believe the goal in the final minute.",
            "The keeper had no chance on that shot.",
            "Our team really needed that win.",
            "Do you think they can win the league?",
        ],
        bases: &[
            "If the defense holds up they have a real chance",
            "The schedule gets much harder after the break",
            "That young striker is turning into a star",
            "I will believe it when the trophy is lifted",
            "We should watch the next game at the pub",
            "The coach finally found the right formation",
            "Injuries could still ruin the season",
            "Winning away games is the real test",
        ],
        reasons: &[
            "the atmosphere there is electric",
            "confidence is everything late in the season",
            "the squad is deeper than last year",
            "the rivals keep dropping points",
        ],
    },
    Topic {
        lines: &[
            "I started learning the guitar last month.",
            "That is great, how is it going?",
            "My fingers hurt but I can play three chords now.",
            "The soreness goes away after a few weeks.",
            "I hope so, I want to play a full song soon.",
            "Which song are you working on?",
        ],
        bases: &[
            "Simple folk songs are perfect with three chords",
            "Practicing ten minutes a day beats one long session",
            "Online lessons helped me with strumming patterns",
            "You should play for us at the next dinner",
            "Lighter strings are easier on sore fingers",
            "A metronome makes a big difference with timing",
            "Recording a practice session every week shows your progress",
            "Joining a beginner group keeps you motivated",
        ],
        reasons: &[
            "the fingertips toughen with routine",
            "steady practice builds muscle memory",
            "playing with others makes it fun",
            "hearing improvement keeps the spark alive",
        ],
    },
    Topic {
        lines: &[
            "I need a new laptop for school.",
            "What will you mainly use it for?",
            "Writing papers and some light photo editing.",
            "Then you do not need anything too expensive.",
            "Battery life matters most since I work in the library.",
            "Have you looked at any models yet?",
        ],
        bases: &[
            "A mid range model with a good battery should be enough",
            "Student discounts can save you quite a lot",
            "Checking reviews for the keyboard is worth the time",
            "A refurbished laptop is often as good as new",
            "More memory helps with photo editing",
            "Light machines are easier to carry around campus",
            "The campus store sometimes bundles software",
            "Waiting for the autumn sales could pay off",
        ],
        reasons: &[
            "papers barely use any power",
            "prices drop right before term starts",
            "you will type on it for hours",
            "warranties on refurbished devices are solid",
        ],
    },
    Topic {
        lines: &[
            "I have exams coming up next week.",
            "How are you preparing for them?",
            "Mostly reading my notes again and again.",
            "Rereading is not always the best method.",
            "What do you suggest instead?",
            "Quizzing on the material tends to work better.",
        ],
        bases: &[
            "Practice questions show what you really know",
            "Studying in short blocks with breaks keeps focus sharp",
            "Explaining topics to a friend reveals the gaps",
            "Sleep matters more than one extra night of cramming",
            "Flashcards work well for definitions and dates",
            "Old exam papers are the best preview",
            "A study group can make the week less lonely",
            "Planning which topics to cover each day reduces stress",
        ],
        reasons: &[
            "recall strengthens memory",
            "the brain consolidates during rest",
            "teaching forces clear thinking",
            "a plan turns panic into steps",
        ],
    },
];

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureOptions {
    /// Probability that a slot is left empty.
    pub missing_rate: f64,
}

impl Default for FixtureOptions {
    fn default() -> Self {
        Self { missing_rate: 0.0 }
    }
}

/// Samples plus the planted quality of each slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub samples: Vec<O2mSample>,
    pub quality: Vec<Vec<Option<f64>>>,
}

impl Fixture {
    /// Ranking of present slots by planted quality, best first; equal
    /// qualities keep slot order.
    pub fn ranking(&self, sample_index: usize) -> PreferenceLabels {
        let mut slots: Vec<(usize, f64)> = self.quality[sample_index]
            .iter()
            .enumerate()
            .filter_map(|(i, q)| q.map(|q| (i, q)))
            .collect();
        slots.sort_by(|a, b| b.1.total_cmp(&a.1));
        PreferenceLabels::Ranking(slots.into_iter().map(|(i, _)| i).collect())
    }

    /// All preference pairs implied by the planted quality.
    pub fn preferences(&self) -> Result<Vec<PreferencePair>, CorpusError> {
        let mut out = Vec::new();
        for (i, sample) in self.samples.iter().enumerate() {
            out.extend(super::expand_preferences(sample, &self.ranking(i))?);
        }
        Ok(out)
    }

    /// Planted quality of `text` within sample `sample_index`.
    pub fn quality_of(&self, sample_index: usize, slot: usize) -> Option<f64> {
        self.quality.get(sample_index).and_then(|q| q.get(slot).copied().flatten())
    }
}

pub fn generate_fixture(seed: u64, count: usize, n: usize) -> Result<Vec<O2mSample>, CorpusError> {
    Ok(generate_fixture_with_quality(seed, count, n, &FixtureOptions::default())?.samples)
}

pub fn generate_fixture_with_quality(
    seed: u64,
    count: usize,
    n: usize,
    opts: &FixtureOptions,
) -> Result<Fixture, CorpusError> {
    if count == 0 {
        return Err(CorpusError::Precondition("fixture count must be at least 1".into()));
    }
    if n < 2 {
        return Err(CorpusError::Precondition("fixture sets need n >= 2".into()));
    }
    if !(0.0..1.0).contains(&opts.missing_rate) {
        return Err(CorpusError::Precondition("missing_rate must lie in [0, 1)".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(count);
    let mut quality = Vec::with_capacity(count);
    for i in 0..count {
        let topic = &TOPICS[rng.random_range(0..TOPICS.len())];
        let turns = rng.random_range(3..=6usize);
        let start = rng.random_range(0..topic.lines.len());
        let texts: Vec<&str> = (0..turns).map(|t| topic.lines[(start + t) % topic.lines.len()]).collect();
        let context = DialogueContext::from_texts(format!("fx{seed}-{i:04}"), &texts)?;

        let cue_counts = cue_counts(&mut rng, n);
        let bases = index::sample(&mut rng, topic.bases.len(), n.min(topic.bases.len())).into_vec();
        let mut slots = Vec::with_capacity(n);
        let mut q = Vec::with_capacity(n);
        for (k, &cues) in cue_counts.iter().enumerate() {
            // Advance the generator identically whether or not the slot is dropped.
            let base = topic.bases[bases[k % bases.len()]];
            let text = compose(&mut rng, topic, base, cues, k >= bases.len());
            let dropped = opts.missing_rate > 0.0 && rng.random_bool(opts.missing_rate);
            if dropped {
                slots.push(None);
                q.push(None);
            } else {
                slots.push(Some(text));
                q.push(Some(cues as f64 / QUALITY_CUES.len() as f64));
            }
        }
        let tags = (1..=n).map(|k| format!("fixture-agent-{k}")).collect();
        samples.push(O2mSample::new(context, ResponseSet::new(slots)?, Some(tags))?);
        quality.push(q);
    }
    Ok(Fixture { samples, quality })
}

/// Distinct cue counts per slot while `n` fits in 0..=4, repeated otherwise.
fn cue_counts(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    let levels = QUALITY_CUES.len() + 1;
    let mut counts: Vec<usize> = if n <= levels {
        let mut picked = index::sample(rng, levels, n).into_vec();
        picked.sort_unstable();
        picked
    } else {
        (0..n).map(|k| k % levels).collect()
    };
    counts.shuffle(rng);
    counts
}

fn compose(rng: &mut ChaCha8Rng, topic: &Topic, base: &str, cues: usize, reused_base: bool) -> String {
    let mut which = [false; 4];
    for i in index::sample(rng, QUALITY_CUES.len(), cues) {
        which[i] = true;
    }
    let reason = topic.reasons[rng.random_range(0..topic.reasons.len())];
    let mut text = String::new();
    if which[0] {
        text.push_str("Honestly, ");
        let mut chars = base.chars();
        if let Some(first) = chars.next() {
            text.extend(first.to_lowercase());
            text.push_str(chars.as_str());
        }
    } else {
        text.push_str(base);
    }
    if which[1] {
        text.push_str(" because ");
        text.push_str(reason);
    }
    if which[2] {
        text.push_str(", and I would recommend it");
    }
    if reused_base {
        text.push_str(" all over again");
    }
    text.push('.');
    if which[3] {
        text.push_str(" Have you tried it yourself?");
    }
    text
}
