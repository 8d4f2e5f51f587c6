//! A miniature deterministic shopping site: search over a small product
//! catalog, paged results, product detail pages with clickable options,
//! and a purchase reward equal to the fraction of the instruction's
//! requirements the bought configuration covers.

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use super::{fresh_run_id, EnvKind, Environment, Snapshot, SnapshotState, StepOutcome};
use crate::error::EnvError;
use crate::seed::substream;

pub const PAGE_SIZE: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionGroup {
    pub name: String,
    pub values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Product {
    pub code: String,
    pub title: String,
    pub attributes: Vec<String>,
    pub options: Vec<OptionGroup>,
    pub price: f64,
}

/// What an instruction asks for: attribute phrases the product must carry,
/// option values that must be clicked, and an optional price ceiling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Requirements {
    pub attributes: Vec<String>,
    pub options: Vec<(String, String)>,
    pub price_ceiling: Option<f64>,
}

impl Requirements {
    pub fn total(&self) -> usize {
        self.attributes.len() + self.options.len() + usize::from(self.price_ceiling.is_some())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ToyShopCatalog {
    pub products: Vec<Product>,
    /// Per-goal requirements, keyed by the exact instruction text.
    pub required: BTreeMap<String, Requirements>,
    /// Registered instruction texts in generation order.
    #[serde(default)]
    pub goal_pool: Vec<String>,
}

impl ToyShopCatalog {
    pub fn load(path: &std::path::Path) -> Result<Self, crate::Error> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), crate::Error> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        crate::memory::persist::write_atomic(path, &bytes)?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Page {
    Search,
    Results { ranked: Vec<usize>, page: usize },
    Detail { product: usize, chosen: Vec<(String, String)>, ranked: Vec<usize>, page: usize },
    Purchased { product: usize },
}

#[derive(Debug, Clone)]
pub(crate) struct ShopState {
    goal: String,
    page: Page,
    steps: usize,
    done: bool,
    reward: Option<f64>,
}

pub struct ToyShop {
    catalog: ToyShopCatalog,
    run_id: u64,
    state: ShopState,
    observation: String,
}

impl ToyShop {
    pub fn from_catalog(catalog: ToyShopCatalog) -> Self {
        ToyShop {
            catalog,
            run_id: 0,
            state: ShopState {
                goal: String::new(),
                page: Page::Search,
                steps: 0,
                done: true,
                reward: None,
            },
            observation: String::new(),
        }
    }

    /// Deterministic catalog plus a pre-registered goal pool for `seed`.
    pub fn generate(seed: u64) -> Self {
        let mut catalog = generate_catalog(&mut substream(seed, "shop-catalog"));
        let pool = generate_goal_pool(&catalog, &mut substream(seed, "shop-goals"), GOAL_POOL_SIZE);
        for (goal, requirements) in pool {
            catalog.goal_pool.push(goal.clone());
            catalog.required.insert(goal, requirements);
        }
        ToyShop::from_catalog(catalog)
    }

    pub fn catalog(&self) -> &ToyShopCatalog {
        &self.catalog
    }

    /// Instruction texts registered for this catalog, in generation order.
    pub fn goal_pool(&self) -> &[String] {
        &self.catalog.goal_pool
    }

    fn render(&self) -> String {
        match &self.state.page {
            Page::Search => "[Search]".to_string(),
            Page::Results { ranked, page } => {
                let pages = ranked.len().div_ceil(PAGE_SIZE).max(1);
                let mut out = format!(
                    "[Back to Search]\nPage {} (Total results: {})\n",
                    page + 1,
                    ranked.len()
                );
                if *page > 0 {
                    out.push_str("[< Prev]\n");
                }
                if page + 1 < pages {
                    out.push_str("[Next >]\n");
                }
                for &idx in ranked.iter().skip(page * PAGE_SIZE).take(PAGE_SIZE) {
                    let product = &self.catalog.products[idx];
                    out.push_str(&format!(
                        "[{}]\n{}\n{:.2}\n",
                        product.code, product.title, product.price
                    ));
                }
                out.trim_end().to_string()
            }
            Page::Detail { product, chosen, .. } => {
                let product = &self.catalog.products[*product];
                let mut out = String::from("[Back to Search]\n[< Prev]\n");
                for group in &product.options {
                    let values: String =
                        group.values.iter().map(|v| format!(" [{v}]")).collect();
                    out.push_str(&format!("{}{}\n", group.name, values));
                }
                out.push_str(&format!(
                    "{}\nPrice: {:.2}\nRating: N.A.\n[Description]\n[Features]\n[Reviews]\n[Buy Now]",
                    product.title, product.price
                ));
                for (_, value) in chosen {
                    out.push_str(&format!("\nYou have clicked {value}."));
                }
                out
            }
            Page::Purchased { product } => {
                let product = &self.catalog.products[*product];
                format!("Thank you for your purchase. You bought [{}].", product.code)
            }
        }
    }

    fn purchase_reward(&self, product: &Product, chosen: &[(String, String)]) -> f64 {
        let Some(req) = self.catalog.required.get(&self.state.goal) else {
            return 0.0;
        };
        let total = req.total();
        if total == 0 {
            return 1.0;
        }
        let mut matched = 0usize;
        for attr in &req.attributes {
            if product.attributes.iter().any(|a| a.eq_ignore_ascii_case(attr)) {
                matched += 1;
            }
        }
        for (group, value) in &req.options {
            if chosen
                .iter()
                .any(|(g, v)| g.eq_ignore_ascii_case(group) && v.eq_ignore_ascii_case(value))
            {
                matched += 1;
            }
        }
        if let Some(ceiling) = req.price_ceiling {
            if product.price <= ceiling {
                matched += 1;
            }
        }
        matched as f64 / total as f64
    }
}

pub(crate) fn tokens(text: &str) -> Vec<String> {
    let mut out: Vec<String> = text
        .split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_ascii_lowercase())
        .collect();
    out.sort();
    out.dedup();
    out
}

/// The canonical search query for an instruction: its requirement phrases,
/// in instruction order, without the price clause.
pub fn search_query_for_goal(goal: &str) -> String {
    let rest = goal.strip_prefix("i need ").unwrap_or(goal);
    let mut parts = Vec::new();
    for segment in rest.split(", ") {
        let segment = segment.trim_end_matches('.').trim();
        if segment.starts_with("and price lower than") {
            continue;
        }
        parts.push(segment.strip_prefix("with ").unwrap_or(segment));
    }
    parts.join(" ")
}

impl Environment for ToyShop {
    fn kind(&self) -> EnvKind {
        EnvKind::Toyshop
    }

    fn reset(&mut self, goal: &str, _seed: u64) -> Result<String, EnvError> {
        if !self.catalog.required.contains_key(goal) {
            return Err(EnvError::UnparseableGoal(goal.to_string()));
        }
        self.run_id = fresh_run_id();
        self.state = ShopState {
            goal: goal.to_string(),
            page: Page::Search,
            steps: 0,
            done: false,
            reward: None,
        };
        self.observation = self.render();
        Ok(self.observation.clone())
    }

    fn goal(&self) -> &str {
        &self.state.goal
    }

    fn observation(&self) -> &str {
        &self.observation
    }

    fn done(&self) -> bool {
        self.state.done
    }

    fn reward(&self) -> Option<f64> {
        self.state.reward
    }

    fn step_count(&self) -> usize {
        self.state.steps
    }

    fn step(&mut self, action: &str) -> Result<StepOutcome, EnvError> {
        if self.state.done {
            return Err(EnvError::EpisodeOver);
        }
        let action = action.trim();
        let next_page: Page = if let Some(query) = strip_bracketed(action, "search") {
            match self.state.page {
                Page::Search => {
                    let ranked = rank(&self.catalog, query);
                    Page::Results { ranked, page: 0 }
                }
                _ => {
                    return Err(EnvError::InvalidAction(
                        "go back to the search page before searching again".into(),
                    ))
                }
            }
        } else if let Some(target) = strip_bracketed(action, "click") {
            let target_lower = target.to_ascii_lowercase();
            match &self.state.page {
                Page::Search => {
                    return Err(EnvError::InvalidAction(
                        "nothing to click here; type search[...] to search".into(),
                    ))
                }
                Page::Results { ranked, page } => match target_lower.as_str() {
                    "back to search" => Page::Search,
                    "next >" => {
                        let pages = ranked.len().div_ceil(PAGE_SIZE).max(1);
                        if page + 1 < pages {
                            Page::Results { ranked: ranked.clone(), page: page + 1 }
                        } else {
                            return Err(EnvError::InvalidAction("there is no next page".into()));
                        }
                    }
                    "< prev" => {
                        if *page > 0 {
                            Page::Results { ranked: ranked.clone(), page: page - 1 }
                        } else {
                            return Err(EnvError::InvalidAction(
                                "there is no previous page".into(),
                            ));
                        }
                    }
                    "buy now" => {
                        return Err(EnvError::InvalidAction(
                            "open a product page before buying".into(),
                        ))
                    }
                    _ => {
                        let visible = ranked.iter().skip(page * PAGE_SIZE).take(PAGE_SIZE);
                        let hit = visible
                            .copied()
                            .find(|&i| {
                                self.catalog.products[i].code.eq_ignore_ascii_case(&target_lower)
                            });
                        match hit {
                            Some(product) => Page::Detail {
                                product,
                                chosen: Vec::new(),
                                ranked: ranked.clone(),
                                page: *page,
                            },
                            None => {
                                return Err(EnvError::InvalidAction(format!(
                                    "there is no {target} on this page"
                                )))
                            }
                        }
                    }
                },
                Page::Detail { product, chosen, ranked, page } => match target_lower.as_str() {
                    "back to search" => Page::Search,
                    "< prev" => Page::Results { ranked: ranked.clone(), page: *page },
                    "buy now" => {
                        let reward =
                            self.purchase_reward(&self.catalog.products[*product], chosen);
                        self.state.reward = Some(reward);
                        self.state.done = true;
                        Page::Purchased { product: *product }
                    }
                    _ => {
                        let spec = &self.catalog.products[*product];
                        let mut owner = None;
                        for group in &spec.options {
                            if let Some(value) =
                                group.values.iter().find(|v| v.eq_ignore_ascii_case(&target_lower))
                            {
                                owner = Some((group.name.clone(), value.clone()));
                                break;
                            }
                        }
                        let Some((group, value)) = owner else {
                            return Err(EnvError::InvalidAction(format!(
                                "there is no option {target} for this product"
                            )));
                        };
                        let mut chosen = chosen.clone();
                        match chosen.iter_mut().find(|(g, _)| *g == group) {
                            Some(entry) => entry.1 = value,
                            None => chosen.push((group, value)),
                        }
                        Page::Detail {
                            product: *product,
                            chosen,
                            ranked: ranked.clone(),
                            page: *page,
                        }
                    }
                },
                Page::Purchased { .. } => unreachable!("done checked above"),
            }
        } else {
            return Err(EnvError::InvalidAction(format!("unknown action {action}")));
        };

        self.state.page = next_page;
        self.state.steps += 1;
        self.observation = self.render();
        Ok(StepOutcome {
            observation: self.observation.clone(),
            done: self.state.done,
            reward: self.state.reward,
        })
    }

    fn admissible_actions(&self) -> Vec<String> {
        if self.state.done {
            return Vec::new();
        }
        match &self.state.page {
            Page::Search => {
                vec![format!("search[{}]", search_query_for_goal(&self.state.goal))]
            }
            Page::Results { ranked, page } => {
                let mut out: Vec<String> = ranked
                    .iter()
                    .skip(page * PAGE_SIZE)
                    .take(PAGE_SIZE)
                    .map(|&i| format!("click[{}]", self.catalog.products[i].code))
                    .collect();
                let pages = ranked.len().div_ceil(PAGE_SIZE).max(1);
                if page + 1 < pages {
                    out.push("click[Next >]".to_string());
                }
                if *page > 0 {
                    out.push("click[< Prev]".to_string());
                }
                out
            }
            Page::Detail { product, chosen, .. } => {
                let spec = &self.catalog.products[*product];
                let mut out = Vec::new();
                for group in &spec.options {
                    let current = chosen.iter().find(|(g, _)| *g == group.name).map(|(_, v)| v);
                    for value in &group.values {
                        if Some(value) != current {
                            out.push(format!("click[{value}]"));
                        }
                    }
                }
                out.push("click[Buy Now]".to_string());
                out.push("click[< Prev]".to_string());
                out
            }
            Page::Purchased { .. } => Vec::new(),
        }
    }

    fn snapshot(&self) -> Snapshot {
        Snapshot { run_id: self.run_id, state: SnapshotState::Shop(self.state.clone()) }
    }

    fn restore(&mut self, snapshot: &Snapshot) -> Result<(), EnvError> {
        if snapshot.run_id != self.run_id {
            return Err(EnvError::StaleHandle);
        }
        let SnapshotState::Shop(state) = &snapshot.state else {
            return Err(EnvError::StaleHandle);
        };
        self.state = state.clone();
        self.observation = self.render();
        Ok(())
    }
}

fn strip_bracketed<'a>(action: &'a str, verb: &str) -> Option<&'a str> {
    let rest = action.strip_prefix(verb)?;
    let rest = rest.strip_prefix('[')?;
    rest.strip_suffix(']')
}

fn rank(catalog: &ToyShopCatalog, query: &str) -> Vec<usize> {
    let query_tokens = tokens(query);
    let mut scored: Vec<(std::cmp::Reverse<usize>, &str, usize)> = catalog
        .products
        .iter()
        .enumerate()
        .map(|(idx, product)| {
            let mut text = product.title.clone();
            for attr in &product.attributes {
                text.push(' ');
                text.push_str(attr);
            }
            let overlap = tokens(&text).iter().filter(|t| query_tokens.contains(*t)).count();
            (std::cmp::Reverse(overlap), product.code.as_str(), idx)
        })
        .collect();
    scored.sort();
    scored.into_iter().map(|(_, _, idx)| idx).collect()
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

const GOAL_POOL_SIZE: usize = 1000;
pub(crate) const CATALOG_SIZE: usize = 30;

const CATEGORIES: &[(&str, &[&str])] = &[
    ("shoes", &["khaki", "black", "steel toe", "rubber soles", "waterproof", "lightweight"]),
    ("shorts", &["loose fit", "moisture wicking", "black", "polyester cotton", "elastic waistband", "long lasting"]),
    ("jacket", &["warm", "gray", "fleece", "windproof", "packable", "hooded"]),
    ("speaker", &["bluetooth", "high power", "3d surround", "portable", "rechargeable", "waterproof"]),
    ("lamp", &["dimmable", "warm light", "metal base", "adjustable", "energy saving", "compact"]),
    ("backpack", &["padded", "water resistant", "lightweight", "expandable", "laptop sized", "durable"]),
];

const COLOR_VALUES: &[&str] = &["black", "blue", "red", "khaki", "gray", "olive"];
const SIZE_VALUES: &[&str] =
    &["small", "medium", "large", "x-large", "3x-large", "4x-large", "11 women", "10.5 women"];

fn generate_catalog(rng: &mut ChaCha8Rng) -> ToyShopCatalog {
    let mut products = Vec::with_capacity(CATALOG_SIZE);
    let mut codes = std::collections::BTreeSet::new();
    while products.len() < CATALOG_SIZE {
        let (category, attr_pool) = CATEGORIES[rng.random_range(0..CATEGORIES.len())];
        let mut attrs: Vec<String> = Vec::new();
        let attr_count = rng.random_range(2..=4);
        while attrs.len() < attr_count {
            let pick = attr_pool[rng.random_range(0..attr_pool.len())].to_string();
            if !attrs.contains(&pick) {
                attrs.push(pick);
            }
        }
        let code = loop {
            let tail: String = (0..8)
                .map(|_| {
                    let alphabet = b"0123456789ABCDEFGHJKLMNPQRSTUVWXYZ";
                    alphabet[rng.random_range(0..alphabet.len())] as char
                })
                .collect();
            let code = format!("B0{tail}");
            if codes.insert(code.clone()) {
                break code;
            }
        };
        let title = {
            let mut words: Vec<String> = attrs.iter().map(|a| title_case(a)).collect();
            words.push(title_case(category));
            words.join(" ")
        };
        let mut options = vec![OptionGroup {
            name: "color".into(),
            values: pick_distinct(rng, COLOR_VALUES, 3),
        }];
        if rng.random_range(0..2) == 1 {
            options.push(OptionGroup {
                name: "size".into(),
                values: pick_distinct(rng, SIZE_VALUES, 3),
            });
        }
        let price = (rng.random_range(500..9000) as f64) / 100.0;
        products.push(Product { code, title, attributes: attrs, options, price });
    }
    ToyShopCatalog { products, required: BTreeMap::new(), goal_pool: Vec::new() }
}

fn pick_distinct(rng: &mut ChaCha8Rng, pool: &[&str], n: usize) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    while out.len() < n.min(pool.len()) {
        let pick = pool[rng.random_range(0..pool.len())].to_string();
        if !out.contains(&pick) {
            out.push(pick);
        }
    }
    out
}

fn title_case(text: &str) -> String {
    text.split_whitespace()
        .map(|w| {
            let mut chars = w.chars();
            match chars.next() {
                Some(first) => first.to_uppercase().collect::<String>() + chars.as_str(),
                None => String::new(),
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Build instruction texts with their requirements. Every goal is derived
/// from a concrete product, so a full-reward purchase always exists.
fn generate_goal_pool(
    catalog: &ToyShopCatalog,
    rng: &mut ChaCha8Rng,
    count: usize,
) -> Vec<(String, Requirements)> {
    let mut pool = Vec::with_capacity(count);
    let mut seen = std::collections::BTreeSet::new();
    while pool.len() < count {
        let product = catalog.products.choose(rng).expect("catalog not empty");
        let mut attrs = product.attributes.clone();
        while attrs.len() > rng.random_range(2..=3).min(attrs.len()) {
            let drop = rng.random_range(0..attrs.len());
            attrs.remove(drop);
        }
        let group = product.options.choose(rng).expect("product has options");
        let value = group.values.choose(rng).expect("group has values").clone();
        let ceiling = (product.price * 1.25 / 10.0).ceil() * 10.0;
        let category = product
            .title
            .split_whitespace()
            .last()
            .unwrap_or("item")
            .to_ascii_lowercase();
        let goal = format!(
            "i need {} {}, with {}, and price lower than {:.2} dollars.",
            attrs.join(" "),
            category,
            value,
            ceiling
        );
        if !seen.insert(goal.clone()) {
            continue;
        }
        let requirements = Requirements {
            attributes: attrs,
            options: vec![(group.name.clone(), value)],
            price_ceiling: Some(ceiling),
        };
        pool.push((goal, requirements));
    }
    pool
}
