use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{PopulationLabel, Sex};
use crate::error::{Error, Result};

/// A group node. `series` names the aggregate population for the group, when
/// the dataset carries one; `members` are leaf populations directly under the
/// node and `children` are sub-groups.
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchyNode {
    pub name: String,
    pub series: Option<PopulationLabel>,
    pub members: Vec<PopulationLabel>,
    pub children: Vec<HierarchyNode>,
}

impl HierarchyNode {
    fn walk<'a>(&'a self, out: &mut Vec<&'a HierarchyNode>) {
        out.push(self);
        for c in &self.children {
            c.walk(out);
        }
    }

    /// All leaf populations under this node, depth first.
    pub fn leaves(&self) -> Vec<PopulationLabel> {
        let mut nodes = Vec::new();
        self.walk(&mut nodes);
        nodes.iter().flat_map(|n| n.members.iter().cloned()).collect()
    }

    fn depth(&self) -> usize {
        1 + self.children.iter().map(HierarchyNode::depth).max().unwrap_or(0)
    }
}

/// Tree of population groups (e.g. Total -> state -> sex).
#[derive(Debug, Clone, PartialEq)]
pub struct Hierarchy {
    pub root: HierarchyNode,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct HierarchyFile {
    root: RawNode,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNode {
    name: String,
    #[serde(default)]
    series: Option<String>,
    #[serde(default)]
    members: Vec<String>,
    #[serde(default)]
    children: Vec<RawNode>,
}

impl RawNode {
    fn into_node(self) -> Result<HierarchyNode> {
        Ok(HierarchyNode {
            name: self.name,
            series: self.series.map(|s| s.parse()).transpose()?,
            members: self.members.iter().map(|s| s.parse()).collect::<Result<_>>()?,
            children: self.children.into_iter().map(RawNode::into_node).collect::<Result<_>>()?,
        })
    }
}

impl Hierarchy {
    /// Reads the TOML form:
    ///
    /// ```toml
    /// [root]
    /// name = "UK"
    /// series = "GBR:total"
    /// members = ["GBR:female", "GBR:male"]
    /// ```
    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: HierarchyFile = toml::from_str(text).map_err(|e| Error::Config(format!("hierarchy: {e}")))?;
        Ok(Self { root: raw.root.into_node()? })
    }

    pub fn to_toml(&self) -> String {
        #[derive(Serialize)]
        struct Out<'a> {
            root: OutNode<'a>,
        }
        #[derive(Serialize)]
        struct OutNode<'a> {
            name: &'a str,
            #[serde(skip_serializing_if = "Option::is_none")]
            series: Option<String>,
            members: Vec<String>,
            #[serde(skip_serializing_if = "Vec::is_empty")]
            children: Vec<OutNode<'a>>,
        }
        fn conv(n: &HierarchyNode) -> OutNode<'_> {
            OutNode {
                name: &n.name,
                series: n.series.as_ref().map(|s| s.to_string()),
                members: n.members.iter().map(|m| m.to_string()).collect(),
                children: n.children.iter().map(conv).collect(),
            }
        }
        toml::to_string(&Out { root: conv(&self.root) }).expect("hierarchy serializes")
    }

    /// Default grouping. With one population name: a single node holding every
    /// non-total population, with the unique total (if any) as its series.
    /// With several names: one child node per name, built the same way.
    pub fn flat(labels: &[PopulationLabel]) -> Self {
        fn group(name: &str, labels: &[&PopulationLabel]) -> HierarchyNode {
            let totals: Vec<&&PopulationLabel> = labels.iter().filter(|l| l.sex == Sex::Total).collect();
            let mut members: Vec<PopulationLabel> =
                labels.iter().filter(|l| l.sex != Sex::Total).map(|l| (*l).clone()).collect();
            let series = if totals.len() == 1 && !members.is_empty() { Some((*totals[0]).clone()) } else { None };
            if members.is_empty() {
                members = labels.iter().map(|l| (*l).clone()).collect();
            }
            HierarchyNode { name: name.to_string(), series, members, children: Vec::new() }
        }
        let names: BTreeSet<&str> = labels.iter().map(|l| l.name.as_str()).collect();
        if names.len() <= 1 {
            let all: Vec<&PopulationLabel> = labels.iter().collect();
            return Self { root: group("all", &all) };
        }
        let children = names
            .into_iter()
            .map(|name| {
                let own: Vec<&PopulationLabel> = labels.iter().filter(|l| l.name == name).collect();
                group(name, &own)
            })
            .collect();
        Self { root: HierarchyNode { name: "all".into(), series: None, members: Vec::new(), children } }
    }

    pub fn depth(&self) -> usize {
        self.root.depth()
    }

    pub fn nodes(&self) -> Vec<&HierarchyNode> {
        let mut out = Vec::new();
        self.root.walk(&mut out);
        out
    }

    pub fn leaves(&self) -> Vec<PopulationLabel> {
        self.root.leaves()
    }

    /// Checks label references and that the leaves partition the non-total
    /// populations (or, for an all-total dataset, the whole dataset).
    pub fn validate(&self, labels: &[PopulationLabel]) -> Result<()> {
        let known: BTreeSet<&PopulationLabel> = labels.iter().collect();
        let mut seen = BTreeSet::new();
        for node in self.nodes() {
            if let Some(s) = &node.series {
                if !known.contains(s) {
                    return Err(Error::Structure(format!("hierarchy node '{}' references unknown series {s}", node.name)));
                }
            }
            for m in &node.members {
                if !known.contains(m) {
                    return Err(Error::Structure(format!("hierarchy node '{}' references unknown population {m}", node.name)));
                }
                if !seen.insert(m.clone()) {
                    return Err(Error::Structure(format!("population {m} appears twice in the hierarchy")));
                }
            }
        }
        let mut expected: BTreeSet<PopulationLabel> = labels.iter().filter(|l| l.sex != Sex::Total).cloned().collect();
        if expected.is_empty() {
            expected = labels.iter().cloned().collect();
        }
        if seen != expected {
            let missing: Vec<String> = expected.difference(&seen).map(|l| l.to_string()).collect();
            let extra: Vec<String> = seen.difference(&expected).map(|l| l.to_string()).collect();
            return Err(Error::Structure(format!(
                "hierarchy leaves must partition the non-total populations (missing: [{}], extra: [{}])",
                missing.join(", "),
                extra.join(", ")
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels() -> Vec<PopulationLabel> {
        ["GBR:female", "GBR:male", "GBR:total"].iter().map(|s| s.parse().unwrap()).collect()
    }

    #[test]
    fn parses_and_validates_one_level() {
        let h = Hierarchy::from_toml(
            "[root]\nname = \"UK\"\nseries = \"GBR:total\"\nmembers = [\"GBR:female\", \"GBR:male\"]\n",
        )
        .unwrap();
        h.validate(&labels()).unwrap();
        assert_eq!(h.depth(), 1);
        assert_eq!(Hierarchy::from_toml(&h.to_toml()).unwrap(), h);
    }

    #[test]
    fn unknown_label_is_rejected() {
        let h = Hierarchy::from_toml("[root]\nname = \"UK\"\nmembers = [\"GBR:female\", \"FRA:male\"]\n").unwrap();
        assert!(matches!(h.validate(&labels()), Err(Error::Structure(_))));
    }

    #[test]
    fn leaves_must_partition() {
        let h = Hierarchy::from_toml("[root]\nname = \"UK\"\nmembers = [\"GBR:female\"]\n").unwrap();
        assert!(h.validate(&labels()).is_err());
    }

    #[test]
    fn flat_default_uses_total_as_series() {
        let h = Hierarchy::flat(&labels());
        assert_eq!(h.root.series, Some("GBR:total".parse().unwrap()));
        assert_eq!(h.root.members.len(), 2);
        h.validate(&labels()).unwrap();
    }

    #[test]
    fn single_population_gets_trivial_node() {
        let only = vec!["X:total".parse().unwrap()];
        let h = Hierarchy::flat(&only);
        assert_eq!(h.root.members, only);
        h.validate(&only).unwrap();
    }

    #[test]
    fn several_countries_get_one_child_each() {
        let mut l = labels();
        l.extend(["FRA:female", "FRA:male", "FRA:total"].iter().map(|s| s.parse::<PopulationLabel>().unwrap()));
        let h = Hierarchy::flat(&l);
        assert_eq!(h.depth(), 2);
        assert_eq!(h.root.children.len(), 2);
        assert_eq!(h.root.children[0].name, "FRA");
        assert_eq!(h.root.children[1].series, Some("GBR:total".parse().unwrap()));
        h.validate(&l).unwrap();
    }
}
