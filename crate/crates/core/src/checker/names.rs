use std::collections::{BTreeMap, BTreeSet};

const PREFIXES: &[&str] = &["param", "par", "p"];
const SUFFIXES: &[&str] = &["param", "par"];

/// Case- and separator-insensitive form of an identifier.
pub fn fold(name: &str) -> String {
    name.chars()
        .filter(|c| *c != '_' && *c != '.')
        .flat_map(char::to_lowercase)
        .collect()
}

/// `fold` after removing one common affix such as `p_` or `_par`.
pub fn stripped(name: &str) -> String {
    let lower = name.to_lowercase();
    for p in PREFIXES {
        if let Some(rest) = lower.strip_prefix(&format!("{p}_")) {
            if !rest.is_empty() {
                return fold(rest);
            }
        }
    }
    for s in SUFFIXES {
        if let Some(rest) = lower.strip_suffix(&format!("_{s}")) {
            if !rest.is_empty() {
                return fold(rest);
            }
        }
    }
    fold(name)
}

/// Pairs candidate identifiers with reference identifiers: exact matches
/// first, then unique matches after `fold`, then after `stripped`. A
/// reference name is used at most once; ambiguous matches stay unpaired.
pub fn match_names<'a>(candidates: &[&'a str], references: &[&'a str]) -> BTreeMap<&'a str, &'a str> {
    let mut out = BTreeMap::new();
    let mut taken: BTreeSet<&str> = BTreeSet::new();
    for c in candidates {
        if references.contains(c) {
            out.insert(*c, *c);
            taken.insert(*c);
        }
    }
    for key in [fold as fn(&str) -> String, stripped] {
        let open: Vec<&str> = references.iter().copied().filter(|r| !taken.contains(r)).collect();
        let mut claims: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for c in candidates.iter().copied().filter(|c| !out.contains_key(c)) {
            let k = key(c);
            let hits: Vec<&str> = open.iter().copied().filter(|r| key(r) == k).collect();
            if let [r] = hits[..] {
                claims.entry(r).or_default().push(c);
            }
        }
        for (r, cs) in claims {
            if let [c] = cs[..] {
                out.insert(c, r);
                taken.insert(r);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_names_win() {
        let m = match_names(&["cA", "ca", "T"], &["cA", "T"]);
        assert_eq!(m.get("cA"), Some(&"cA"));
        assert_eq!(m.get("T"), Some(&"T"));
        assert_eq!(m.get("ca"), None);
    }

    #[test]
    fn case_and_underscores_fold() {
        let m = match_names(&["c_A_in", "CA0", "t_cool", "k_f1"], &["cA_in", "cA0", "T_cool", "kf1"]);
        assert_eq!(m.len(), 4);
        assert_eq!(m["c_A_in"], "cA_in");
        assert_eq!(m["k_f1"], "kf1");
    }

    #[test]
    fn affixes_are_stripped() {
        let m = match_names(&["p_V", "q_par"], &["V", "q"]);
        assert_eq!(m["p_V"], "V");
        assert_eq!(m["q_par"], "q");
    }

    #[test]
    fn ambiguity_leaves_names_unmatched() {
        let m = match_names(&["ca"], &["cA", "CA"]);
        assert!(m.is_empty());
        let m = match_names(&["c_a", "C_A"], &["cA"]);
        assert!(m.is_empty());
    }
}
