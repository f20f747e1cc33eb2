//! Gym template catalog with two category forests: optimization type and
//! NAICS-style industry. Templates attach to any number of nodes in either
//! forest; counts are always computed from the current attachments.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gymspec::{GymSpec, ValidationReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Taxonomy {
    DoType,
    Industry,
}

impl Taxonomy {
    pub fn as_str(self) -> &'static str {
        match self {
            Taxonomy::DoType => "do_type",
            Taxonomy::Industry => "industry",
        }
    }

    pub fn parse(s: &str) -> Option<Taxonomy> {
        match s {
            "do_type" => Some(Taxonomy::DoType),
            "industry" => Some(Taxonomy::Industry),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryNode {
    pub id: String,
    pub title: String,
    pub parent_id: Option<String>,
    pub taxonomy: Taxonomy,
    pub code: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateEntry {
    pub id: String,
    pub name: String,
    pub description: String,
    pub spec: GymSpec,
    pub category_ids: BTreeSet<String>,
    pub author: String,
    /// Unix milliseconds.
    pub created_at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateSummary {
    pub id: String,
    pub name: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeView {
    pub node: CategoryNode,
    pub template_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BrowseView {
    /// The node being browsed; `None` at a taxonomy root.
    pub pinned: Option<NodeView>,
    pub children: Vec<NodeView>,
    pub templates: Vec<TemplateSummary>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BrowseTarget<'a> {
    Root(Taxonomy),
    Node(&'a str),
}

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("unknown category `{0}`")]
    UnknownCategory(String),
    #[error("a template needs at least one category")]
    NoCategories,
    #[error("template spec is invalid: {0}")]
    ValidationFailed(ValidationReport),
    #[error("malformed taxonomy: {0}")]
    Taxonomy(String),
}

#[derive(Debug, Clone, Deserialize)]
struct SeedRow {
    code: String,
    title: String,
    parent_code: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
struct SeedFile {
    do_type: Vec<SeedRow>,
    industry: Vec<SeedRow>,
}

pub fn node_id(taxonomy: Taxonomy, code: &str) -> String {
    format!("{}:{code}", taxonomy.as_str())
}

/// First two digits of an industry code, or the range bounds of a sector
/// code such as `31-33`.
fn sector_range(code: &str) -> Option<(u32, u32)> {
    match code.split_once('-') {
        Some((a, b)) => Some((a.parse().ok()?, b.parse().ok()?)),
        None if code.len() == 2 => code.parse().ok().map(|v| (v, v)),
        None => None,
    }
}

fn check_industry_code(node: &CategoryNode, parent: Option<&CategoryNode>) -> Result<(), String> {
    match parent {
        None => sector_range(&node.code)
            .map(|_| ())
            .ok_or_else(|| format!("sector `{}` must be a 2-digit code or range", node.code)),
        Some(p) => {
            if !node.code.chars().all(|c| c.is_ascii_digit()) || node.code.len() > 6 {
                return Err(format!("industry code `{}` must be 3-6 digits", node.code));
            }
            let ok = match sector_range(&p.code) {
                Some((lo, hi)) if p.parent_id.is_none() => {
                    node.code.len() == 3
                        && node.code[..2].parse::<u32>().is_ok_and(|v| (lo..=hi).contains(&v))
                }
                _ => node.code.len() == p.code.len() + 1 && node.code.starts_with(&p.code),
            };
            if ok {
                Ok(())
            } else {
                Err(format!("code `{}` does not extend parent `{}`", node.code, p.code))
            }
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Catalog {
    nodes: BTreeMap<String, CategoryNode>,
    children: HashMap<String, Vec<String>>,
    templates: BTreeMap<String, TemplateEntry>,
    next_template: u64,
}

impl Catalog {
    /// Builds a catalog from category nodes, checking that both
    /// taxonomies form forests and that industry codes extend their
    /// parents' codes.
    pub fn from_nodes(nodes: Vec<CategoryNode>) -> Result<Catalog, CatalogError> {
        let mut catalog = Catalog::default();
        for n in nodes {
            if catalog.nodes.contains_key(&n.id) {
                return Err(CatalogError::Taxonomy(format!("duplicate node `{}`", n.id)));
            }
            catalog.nodes.insert(n.id.clone(), n);
        }
        for n in catalog.nodes.values() {
            let parent = match &n.parent_id {
                Some(pid) => {
                    let p = catalog.nodes.get(pid).ok_or_else(|| {
                        CatalogError::Taxonomy(format!("`{}` has unknown parent `{pid}`", n.id))
                    })?;
                    if p.taxonomy != n.taxonomy {
                        return Err(CatalogError::Taxonomy(format!(
                            "`{}` crosses taxonomies",
                            n.id
                        )));
                    }
                    Some(p)
                }
                None => None,
            };
            if n.taxonomy == Taxonomy::Industry {
                check_industry_code(n, parent).map_err(CatalogError::Taxonomy)?;
            }
            if let Some(pid) = &n.parent_id {
                catalog.children.entry(pid.clone()).or_default().push(n.id.clone());
            }
        }
        // Parent links to existing nodes plus strictly growing codes rule
        // out industry cycles; do_type nodes still need an explicit check.
        for n in catalog.nodes.values() {
            let mut seen = BTreeSet::new();
            let mut cur = Some(n);
            while let Some(c) = cur {
                if !seen.insert(&c.id) {
                    return Err(CatalogError::Taxonomy(format!("cycle through `{}`", n.id)));
                }
                cur = c.parent_id.as_ref().and_then(|p| catalog.nodes.get(p));
            }
        }
        Ok(catalog)
    }

    /// The shipped taxonomy (four optimization types, twenty industry
    /// sectors with a sampled subtree) and the four seed templates.
    pub fn seeded() -> Catalog {
        let file: SeedFile =
            serde_json::from_str(include_str!("../data/taxonomy.json")).expect("seed taxonomy parses");
        let mut nodes = Vec::new();
        for (taxonomy, rows) in [(Taxonomy::DoType, file.do_type), (Taxonomy::Industry, file.industry)] {
            for r in rows {
                nodes.push(CategoryNode {
                    id: node_id(taxonomy, &r.code),
                    title: r.title,
                    parent_id: r.parent_code.map(|p| node_id(taxonomy, &p)),
                    taxonomy,
                    code: r.code,
                });
            }
        }
        let mut catalog = Catalog::from_nodes(nodes).expect("seed taxonomy is well formed");
        for (spec, cats) in seed::templates() {
            let name = spec.name.clone();
            let description = spec.description.clone();
            let cats = cats.iter().map(|c| c.to_string()).collect();
            catalog
                .publish_template(spec, &name, &description, cats, "autodo")
                .expect("seed templates are valid");
        }
        catalog
    }

    pub fn node(&self, id: &str) -> Option<&CategoryNode> {
        self.nodes.get(id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &CategoryNode> {
        self.nodes.values()
    }

    pub fn roots(&self, taxonomy: Taxonomy) -> Vec<&CategoryNode> {
        self.nodes
            .values()
            .filter(|n| n.taxonomy == taxonomy && n.parent_id.is_none())
            .collect()
    }

    pub fn children_of(&self, id: &str) -> Vec<&CategoryNode> {
        let mut out: Vec<&CategoryNode> = self
            .children
            .get(id)
            .into_iter()
            .flatten()
            .filter_map(|c| self.nodes.get(c))
            .collect();
        out.sort_by(|a, b| a.code.cmp(&b.code));
        out
    }

    pub fn templates(&self) -> impl Iterator<Item = &TemplateEntry> {
        self.templates.values()
    }

    pub fn template(&self, id: &str) -> Option<&TemplateEntry> {
        self.templates.get(id)
    }

    fn subtree<'a>(&'a self, id: &'a str) -> BTreeSet<&'a str> {
        let mut out = BTreeSet::new();
        let mut stack = vec![id];
        while let Some(cur) = stack.pop() {
            if out.insert(cur) {
                if let Some(kids) = self.children.get(cur) {
                    stack.extend(kids.iter().map(String::as_str));
                }
            }
        }
        out
    }

    /// Distinct templates attached to the node or any descendant.
    pub fn template_count(&self, id: &str) -> usize {
        let subtree = self.subtree(id);
        self.templates
            .values()
            .filter(|t| t.category_ids.iter().any(|c| subtree.contains(c.as_str())))
            .count()
    }

    fn view(&self, node: &CategoryNode) -> NodeView {
        NodeView {
            node: node.clone(),
            template_count: self.template_count(&node.id),
        }
    }

    pub fn browse(&self, target: BrowseTarget<'_>) -> Result<BrowseView, CatalogError> {
        match target {
            BrowseTarget::Root(taxonomy) => {
                let mut roots = self.roots(taxonomy);
                roots.sort_by(|a, b| a.code.cmp(&b.code));
                Ok(BrowseView {
                    pinned: None,
                    children: roots.into_iter().map(|n| self.view(n)).collect(),
                    templates: Vec::new(),
                })
            }
            BrowseTarget::Node(id) => {
                let node = self
                    .nodes
                    .get(id)
                    .ok_or_else(|| CatalogError::NotFound(id.to_string()))?;
                let templates = self
                    .templates
                    .values()
                    .filter(|t| t.category_ids.contains(id))
                    .map(|t| TemplateSummary {
                        id: t.id.clone(),
                        name: t.name.clone(),
                        description: t.description.clone(),
                    })
                    .collect();
                Ok(BrowseView {
                    pinned: Some(self.view(node)),
                    children: self.children_of(id).into_iter().map(|n| self.view(n)).collect(),
                    templates,
                })
            }
        }
    }

    /// Copy of a template's spec for composer prefill.
    pub fn load_template(&self, id: &str) -> Result<GymSpec, CatalogError> {
        self.templates
            .get(id)
            .map(|t| t.spec.clone())
            .ok_or_else(|| CatalogError::NotFound(id.to_string()))
    }

    pub fn publish_template(
        &mut self,
        spec: GymSpec,
        name: &str,
        description: &str,
        category_ids: BTreeSet<String>,
        author: &str,
    ) -> Result<TemplateEntry, CatalogError> {
        let report = spec.validate();
        if !report.is_valid() {
            return Err(CatalogError::ValidationFailed(report));
        }
        if category_ids.is_empty() {
            return Err(CatalogError::NoCategories);
        }
        if let Some(bad) = category_ids.iter().find(|c| !self.nodes.contains_key(*c)) {
            return Err(CatalogError::UnknownCategory(bad.clone()));
        }
        self.next_template += 1;
        let entry = TemplateEntry {
            id: format!("tpl-{:04}", self.next_template),
            name: name.to_string(),
            description: description.to_string(),
            spec,
            category_ids,
            author: author.to_string(),
            created_at: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_millis() as u64),
        };
        self.templates.insert(entry.id.clone(), entry.clone());
        Ok(entry)
    }

    /// Restores a previously published entry (e.g. from persistent
    /// storage), keeping its id.
    pub fn restore(&mut self, entry: TemplateEntry) -> Result<(), CatalogError> {
        if let Some(bad) = entry.category_ids.iter().find(|c| !self.nodes.contains_key(*c)) {
            return Err(CatalogError::UnknownCategory(bad.clone()));
        }
        if let Some(n) = entry.id.strip_prefix("tpl-").and_then(|n| n.parse::<u64>().ok()) {
            self.next_template = self.next_template.max(n);
        }
        self.templates.insert(entry.id.clone(), entry);
        Ok(())
    }

    /// Case-insensitive token match over name and description, ranked by
    /// number of matching query tokens, then name.
    pub fn search_templates(&self, query: &str) -> Vec<&TemplateEntry> {
        let tokens: Vec<String> = query
            .split_whitespace()
            .map(str::to_lowercase)
            .collect();
        let mut scored: Vec<(usize, &TemplateEntry)> = self
            .templates
            .values()
            .filter_map(|t| {
                if tokens.is_empty() {
                    return Some((0, t));
                }
                let hay = format!("{} {}", t.name, t.description).to_lowercase();
                let score = tokens.iter().filter(|tok| hay.contains(tok.as_str())).count();
                (score > 0).then_some((score, t))
            })
            .collect();
        scored.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.name.cmp(&b.1.name)).then_with(|| a.1.id.cmp(&b.1.id)));
        scored.into_iter().map(|(_, t)| t).collect()
    }
}

/// Seed environment specs shipped with the catalog.
pub mod seed {
    use crate::gymspec::{parse_spec, GymSpec};

    pub const GRIDWORLD: &str = include_str!("../data/templates/gridworld.json");
    pub const BAKERY: &str = include_str!("../data/templates/bakery.json");
    pub const PRODUCE_ARRANGEMENT: &str = include_str!("../data/templates/produce_arrangement.json");
    pub const MACHINE_MAINTENANCE: &str = include_str!("../data/templates/machine_maintenance.json");

    pub fn gridworld() -> GymSpec {
        parse_spec(GRIDWORLD).expect("gridworld seed parses")
    }

    pub fn bakery() -> GymSpec {
        parse_spec(BAKERY).expect("bakery seed parses")
    }

    pub fn produce_arrangement() -> GymSpec {
        parse_spec(PRODUCE_ARRANGEMENT).expect("produce seed parses")
    }

    pub fn machine_maintenance() -> GymSpec {
        parse_spec(MACHINE_MAINTENANCE).expect("maintenance seed parses")
    }

    /// Seed specs with the category ids they are listed under.
    pub fn templates() -> Vec<(GymSpec, Vec<&'static str>)> {
        vec![
            (gridworld(), vec!["do_type:scheduling", "industry:493110"]),
            (
                bakery(),
                vec!["do_type:supply_demand_planning", "industry:311811", "industry:445291"],
            ),
            (
                produce_arrangement(),
                vec!["do_type:resource_assignment", "industry:445230", "industry:1113"],
            ),
            (
                machine_maintenance(),
                vec!["do_type:selection_allocation", "industry:811310", "industry:3331"],
            ),
        ]
    }
}
