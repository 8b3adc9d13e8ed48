//! Seeded synthetic recipe corpora in the same schema as a real export.
//!
//! Used for demos, tests and the acceptance suite: a realistic-length corpus
//! with planted defects whose expected treatment is known, and a tiny corpus
//! of short, mutually distinct recipes that small models can memorize.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::record::{IngredientLine, Quantity, RecipeRecord};
use super::tagged::serialize;

const INGREDIENTS: &[&str] = &[
    "basil", "bay leaf", "black pepper", "butter", "cabbage", "cardamom", "carrot", "cauliflower",
    "celery", "cheddar", "chickpeas", "chili flakes", "cilantro", "cinnamon", "coconut milk",
    "corn", "cream", "cumin", "dill", "egg", "eggplant", "fennel", "feta", "flour", "garlic",
    "ginger", "green beans", "honey", "kale", "leek", "lemon juice", "lentils", "lime",
    "mushrooms", "mustard", "nutmeg", "oats", "olive oil", "onion", "oregano", "paprika",
    "parsley", "peas", "potato", "pumpkin", "quinoa", "red lentils", "rice", "rosemary",
    "saffron", "salt", "sesame seeds", "shallot", "spinach", "sugar", "sweet potato", "thyme",
    "tofu", "tomato", "turmeric", "vinegar", "walnuts", "yogurt", "zucchini",
];

const UNITS: &[&str] = &["cup", "cups", "tbsp", "tsp", "g", "ml", "pinch", "clove", "slice"];

const ADJECTIVES: &[&str] = &[
    "Rustic", "Spiced", "Golden", "Creamy", "Smoky", "Zesty", "Hearty", "Herbed", "Roasted",
    "Crispy", "Tangy", "Simple", "Festive", "Summer", "Winter", "Quick",
];

const DISHES: &[&str] = &[
    "Stew", "Curry", "Salad", "Soup", "Bake", "Pilaf", "Gratin", "Stir Fry", "Tart", "Skillet",
    "Bowl", "Fritters", "Risotto", "Casserole",
];

const STEP_TEMPLATES: &[&str] = &[
    "Heat the {a} in a heavy pan over medium heat and stir in the {b}",
    "Chop the {a} finely and set aside with the {b}",
    "Simmer the {a} gently for {n} minutes until the {b} is tender",
    "Whisk the {a} with the {b} in a large bowl until smooth",
    "Roast the {a} at {t} degrees for {n} minutes, turning once",
    "Fold in the {a} and season with the {b} to taste",
    "Spread the {a} over the {b} and bake for {n} minutes",
    "Blend the {a} and {b} until the mixture is silky",
    "Toast the {a} in a dry skillet, then add the {b}",
    "Let the {a} rest for {n} minutes before adding the {b}",
];

fn pick<'a, R: Rng>(rng: &mut R, pool: &[&'a str]) -> &'a str {
    pool[rng.gen_range(0..pool.len())]
}

fn quantity<R: Rng>(rng: &mut R) -> Option<Quantity> {
    match rng.gen_range(0..10) {
        0 => None,
        1..=3 => Some(Quantity::integer(rng.gen_range(1..5))),
        4..=6 => {
            let (n, d) = [(1, 2), (1, 3), (2, 3), (1, 4), (3, 4), (1, 8)][rng.gen_range(0..6)];
            Some(Quantity::new(n, d).expect("nonzero denominator"))
        }
        7 => Some(Quantity::new(3, 2).expect("nonzero denominator")),
        _ => Some(Quantity::integer(rng.gen_range(50..500))),
    }
}

fn step<R: Rng>(rng: &mut R, names: &[&str]) -> String {
    let a = pick(rng, names);
    let b = pick(rng, names);
    let s = pick(rng, STEP_TEMPLATES)
        .replace("{a}", a)
        .replace("{b}", b)
        .replace("{n}", &rng.gen_range(3..45).to_string())
        .replace("{t}", &(rng.gen_range(32..45) * 10).to_string());
    format!("{s}.")
}

fn char_len(r: &RecipeRecord) -> usize {
    serialize(r).map(|d| d.char_len).unwrap_or(0)
}

/// A normal-length recipe: several ingredients and steps, grown until the
/// tagged form reaches `target_len` characters.
fn normal_recipe<R: Rng>(rng: &mut R, id: String, target_len: usize) -> RecipeRecord {
    let n_ingr = rng.gen_range(4..8);
    let mut names: Vec<&str> = INGREDIENTS.choose_multiple(rng, n_ingr).copied().collect();
    names.sort_unstable();
    let ingredients = names
        .iter()
        .map(|n| {
            let q = quantity(rng);
            let unit = if q.is_some() && rng.gen_bool(0.7) { pick(rng, UNITS) } else { "" };
            IngredientLine::new(q, unit, *n)
        })
        .collect();
    let title = format!(
        "{} {} {}",
        pick(rng, ADJECTIVES),
        title_case(names[0]),
        pick(rng, DISHES)
    );
    let mut r = RecipeRecord {
        id,
        title,
        ingredients,
        instructions: vec![step(rng, &names)],
    };
    while char_len(&r) < target_len {
        r.instructions.push(step(rng, &names));
    }
    r
}

fn short_recipe(id: String, name: &str) -> RecipeRecord {
    RecipeRecord {
        id,
        title: format!("Plain {}", title_case(name)),
        ingredients: vec![IngredientLine::new(None, "", name)],
        instructions: vec!["Serve.".into()],
    }
}

fn title_case(s: &str) -> String {
    s.split(' ')
        .map(|w| {
            let mut c = w.chars();
            match c.next() {
                Some(f) => f.to_uppercase().chain(c).collect(),
                None => String::new(),
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// `n` valid, distinct recipes of roughly 600–900 tagged characters.
pub fn corpus(n: usize, seed: u64) -> Vec<RecipeRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let target = rng.gen_range(600..800);
            normal_recipe(&mut rng, format!("syn-{i:05}"), target)
        })
        .collect()
}

/// Counts of each defect to plant in [`planted`].
#[derive(Debug, Clone, Copy)]
pub struct Plan {
    pub total: usize,
    pub duplicates: usize,
    pub incomplete: usize,
    pub overlong: usize,
    pub short: usize,
}

impl Default for Plan {
    fn default() -> Self {
        Plan {
            total: 1000,
            duplicates: 30,
            incomplete: 20,
            overlong: 10,
            short: 15,
        }
    }
}

/// A synthetic corpus plus the ids of every planted defect.
#[derive(Debug, Clone)]
pub struct PlantedCorpus {
    pub records: Vec<RecipeRecord>,
    pub duplicates: Vec<String>,
    pub incomplete: Vec<String>,
    pub overlong: Vec<String>,
    pub short: Vec<String>,
}

#[derive(Clone, Copy, PartialEq)]
enum Kind {
    Normal,
    Duplicate,
    Incomplete,
    Overlong,
    Short,
}

pub fn planted(plan: Plan, seed: u64) -> PlantedCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let special = plan.duplicates + plan.incomplete + plan.overlong + plan.short;
    assert!(special + 10 <= plan.total, "plan leaves too few normal records");
    assert!(plan.short <= INGREDIENTS.len(), "not enough distinct ingredients for short records");
    // short records each get their own ingredient so none is redundant
    let mut short_names: Vec<&str> = INGREDIENTS.to_vec();
    short_names.shuffle(&mut rng);

    let mut kinds: Vec<Kind> = std::iter::repeat(Kind::Duplicate)
        .take(plan.duplicates)
        .chain(std::iter::repeat(Kind::Incomplete).take(plan.incomplete))
        .chain(std::iter::repeat(Kind::Overlong).take(plan.overlong))
        .chain(std::iter::repeat(Kind::Short).take(plan.short))
        .chain(std::iter::repeat(Kind::Normal).take(plan.total - special - 10))
        .collect();
    kinds.shuffle(&mut rng);
    // the first records are plain so every duplicate has an earlier original
    let mut all = vec![Kind::Normal; 10];
    all.extend(kinds);

    let mut out = PlantedCorpus {
        records: Vec::with_capacity(plan.total),
        duplicates: Vec::new(),
        incomplete: Vec::new(),
        overlong: Vec::new(),
        short: Vec::new(),
    };
    let mut normals: Vec<usize> = Vec::new();
    for (i, kind) in all.into_iter().enumerate() {
        let id = format!("rec-{i:05}");
        let r = match kind {
            Kind::Normal => {
                normals.push(i);
                let target = rng.gen_range(600..800);
                normal_recipe(&mut rng, id, target)
            }
            Kind::Duplicate => {
                let orig = &out.records[normals[rng.gen_range(0..normals.len())]];
                let mut d = orig.clone();
                d.id = id.clone();
                d.title = d.title.to_uppercase();
                d.ingredients.reverse();
                out.duplicates.push(id);
                d
            }
            Kind::Incomplete => {
                let target = rng.gen_range(600..800);
                let mut r = normal_recipe(&mut rng, id.clone(), target);
                match rng.gen_range(0..4) {
                    0 => r.instructions.clear(),
                    1 => r.title.clear(),
                    2 => r.ingredients.clear(),
                    _ => r.instructions.push("   ".into()),
                }
                out.incomplete.push(id);
                r
            }
            Kind::Overlong => {
                let target = rng.gen_range(2100..2600);
                out.overlong.push(id.clone());
                normal_recipe(&mut rng, id, target)
            }
            Kind::Short => {
                out.short.push(id.clone());
                short_recipe(id, short_names[out.short.len() - 1])
            }
        };
        out.records.push(r);
    }
    out
}

/// `n` short recipes (about 100 characters plus tags) with pairwise disjoint
/// ingredients, small enough for a toy model to memorize.
pub fn toy(n: usize, seed: u64) -> Vec<RecipeRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool: Vec<&str> = INGREDIENTS.to_vec();
    pool.shuffle(&mut rng);
    assert!(n * 2 <= pool.len(), "not enough distinct ingredients for {n} toy recipes");
    let verbs = ["Boil", "Fry", "Bake", "Steam", "Grill", "Toss", "Mash", "Stew"];
    (0..n)
        .map(|i| {
            let (a, b) = (pool[2 * i], pool[2 * i + 1]);
            let q = quantity(&mut rng).unwrap_or(Quantity::integer(1));
            RecipeRecord {
                id: format!("toy-{i:02}"),
                title: format!("{} {}", title_case(a), pick(&mut rng, DISHES)),
                ingredients: vec![
                    IngredientLine::new(Some(q), pick(&mut rng, UNITS), a),
                    IngredientLine::new(None, "", b),
                ],
                instructions: vec![
                    format!("{} the {a}.", verbs[i % verbs.len()]),
                    format!("Add {b} and serve."),
                ],
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::prep::clean;

    #[test]
    fn corpus_is_valid_and_seeded() {
        let a = corpus(50, 7);
        assert_eq!(a, corpus(50, 7));
        assert_ne!(a, corpus(50, 8));
        assert!(a.iter().all(RecipeRecord::is_valid));
        assert_eq!(clean(&a).kept.len(), 50);
    }

    #[test]
    fn pools_have_no_duplicates() {
        let mut v = INGREDIENTS.to_vec();
        v.sort_unstable();
        v.dedup();
        assert_eq!(v.len(), INGREDIENTS.len());
    }

    #[test]
    fn planted_defects_are_labelled() {
        let p = planted(Plan::default(), 1);
        assert_eq!(p.records.len(), 1000);
        assert_eq!(p.duplicates.len(), 30);
        assert_eq!(p.incomplete.len(), 20);
        for id in &p.overlong {
            let r = p.records.iter().find(|r| &r.id == id).unwrap();
            assert!(char_len(r) > 2000);
        }
    }

    #[test]
    fn toy_recipes_are_short_and_distinct() {
        let t = toy(10, 3);
        assert!(t.iter().all(RecipeRecord::is_valid));
        assert_eq!(clean(&t).kept.len(), 10);
        assert!(t.iter().all(|r| char_len(r) < 260));
    }
}
