use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::frontend::lexer::line_col;
use crate::frontend::Span;

/// The eight error categories, numbered as in the evaluation table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    UnitConversion,
    DeclarationSyntax,
    IncorrectValue,
    UndefinedVariable,
    IncorrectEquation,
    Structural,
    UnitConflict,
    GeneralSyntax,
}

impl Category {
    pub const ALL: [Category; 8] = [
        Category::UnitConversion,
        Category::DeclarationSyntax,
        Category::IncorrectValue,
        Category::UndefinedVariable,
        Category::IncorrectEquation,
        Category::Structural,
        Category::UnitConflict,
        Category::GeneralSyntax,
    ];

    /// 1-based number.
    pub fn number(self) -> usize {
        self as usize + 1
    }

    pub fn from_number(n: usize) -> Option<Category> {
        Category::ALL.get(n.checked_sub(1)?).copied()
    }

    pub fn label(self) -> &'static str {
        match self {
            Category::UnitConversion => "unit conversion",
            Category::DeclarationSyntax => "declaration syntax",
            Category::IncorrectValue => "incorrect value",
            Category::UndefinedVariable => "undefined variable",
            Category::IncorrectEquation => "incorrect equation",
            Category::Structural => "structural",
            Category::UnitConflict => "unit conflict",
            Category::GeneralSyntax => "general syntax",
        }
    }
}

/// Per-category occurrence counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub unit_conversion: usize,
    pub declaration_syntax: usize,
    pub incorrect_value: usize,
    pub undefined_variable: usize,
    pub incorrect_equation: usize,
    pub structural: usize,
    pub unit_conflict: usize,
    pub general_syntax: usize,
}

impl Counts {
    pub fn get(&self, c: Category) -> usize {
        self.as_array()[c as usize]
    }

    fn slot(&mut self, c: Category) -> &mut usize {
        match c {
            Category::UnitConversion => &mut self.unit_conversion,
            Category::DeclarationSyntax => &mut self.declaration_syntax,
            Category::IncorrectValue => &mut self.incorrect_value,
            Category::UndefinedVariable => &mut self.undefined_variable,
            Category::IncorrectEquation => &mut self.incorrect_equation,
            Category::Structural => &mut self.structural,
            Category::UnitConflict => &mut self.unit_conflict,
            Category::GeneralSyntax => &mut self.general_syntax,
        }
    }

    pub fn add(&mut self, c: Category, n: usize) {
        *self.slot(c) += n;
    }

    pub fn as_array(&self) -> [usize; 8] {
        [
            self.unit_conversion,
            self.declaration_syntax,
            self.incorrect_value,
            self.undefined_variable,
            self.incorrect_equation,
            self.structural,
            self.unit_conflict,
            self.general_syntax,
        ]
    }

    pub fn total(&self) -> usize {
        self.as_array().iter().sum()
    }

    pub fn merged(&self, other: &Counts) -> Counts {
        let mut out = *self;
        for c in Category::ALL {
            out.add(c, other.get(c));
        }
        out
    }
}

/// One counted error with its evidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub category: Category,
    /// Location in the checked text; absent for whole-model findings.
    pub span: Option<Span>,
    pub explanation: String,
}

impl Finding {
    pub fn new(category: Category, span: Option<Span>, explanation: impl Into<String>) -> Self {
        Finding {
            category,
            span,
            explanation: explanation.into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub counts: Counts,
    pub total: usize,
    pub findings: Vec<Finding>,
    /// Informational remarks that are not counted.
    pub notes: Vec<String>,
}

impl ErrorReport {
    pub fn from_findings(mut findings: Vec<Finding>, notes: Vec<String>) -> Self {
        findings.sort_by_key(|f| (f.category, f.span.map(|s| (s.start, s.end))));
        let mut counts = Counts::default();
        for f in &findings {
            counts.add(f.category, 1);
        }
        ErrorReport {
            total: counts.total(),
            counts,
            findings,
            notes,
        }
    }

    pub fn count(&self, c: Category) -> usize {
        self.counts.get(c)
    }

    pub fn is_clean(&self) -> bool {
        self.total == 0
    }

    /// Evidence lines `file:line:col: [n] label: explanation`, then notes.
    pub fn render(&self, file: &str, src: &str) -> String {
        let mut out = String::new();
        for f in &self.findings {
            let at = match f.span {
                Some(s) => {
                    let (l, c) = line_col(src, s.start);
                    format!("{file}:{l}:{c}")
                }
                None => file.to_string(),
            };
            let _ = writeln!(
                out,
                "{at}: [{}] {}: {}",
                f.category.number(),
                f.category.label(),
                f.explanation
            );
        }
        for n in &self.notes {
            let _ = writeln!(out, "{file}: note: {n}");
        }
        let _ = writeln!(out, "{file}: {} finding(s)", self.total);
        out
    }
}

/// Column groups of the table: declarations, equations, general syntax.
pub const COLUMN_GROUPS: [(&str, &[Category]); 3] = [
    (
        "Parameter and variable declarations",
        &[
            Category::UnitConversion,
            Category::DeclarationSyntax,
            Category::IncorrectValue,
            Category::UndefinedVariable,
        ],
    ),
    (
        "Physics equations",
        &[Category::IncorrectEquation, Category::Structural, Category::UnitConflict],
    ),
    ("General syntax", &[Category::GeneralSyntax]),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub label: String,
    pub counts: Counts,
    pub total: usize,
}

/// Occurrences per category per model, with a totals line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub rows: Vec<TableRow>,
    pub totals: TableRow,
}

pub fn tabulate(reports: &[(String, ErrorReport)]) -> Table {
    let rows: Vec<TableRow> = reports
        .iter()
        .map(|(label, r)| TableRow {
            label: label.clone(),
            counts: r.counts,
            total: r.counts.total(),
        })
        .collect();
    let sum = rows.iter().fold(Counts::default(), |acc, r| acc.merged(&r.counts));
    Table {
        rows,
        totals: TableRow {
            label: "total".into(),
            counts: sum,
            total: sum.total(),
        },
    }
}

impl Table {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }

    pub fn to_text(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.label.chars().count())
            .chain([5])
            .max()
            .unwrap_or(5);
        let cells = |label: &str, f: &dyn Fn(Category) -> String, last: String| {
            let mut s = format!("{label:width$} ");
            for (_, cats) in COLUMN_GROUPS {
                for (i, c) in cats.iter().enumerate() {
                    let sep = if i == 0 { "|" } else { " " };
                    let _ = write!(s, "{sep}{:>4}", f(*c));
                }
                s.push(' ');
            }
            let _ = write!(s, "| {last:>5}");
            s
        };
        let mut groups = format!("{:width$} ", "");
        for (name, cats) in COLUMN_GROUPS {
            let w = cats.len() * 5;
            let short = name.split_whitespace().last().unwrap_or(name);
            let _ = write!(groups, "|{short:^w$}");
        }
        groups.push('|');
        let header = cells("model", &|c| c.number().to_string(), "total".into());
        let rule = "-".repeat(header.chars().count());
        let mut out = format!("{groups}\n{header}\n{rule}\n");
        let line = |r: &TableRow| cells(&r.label, &|c| r.counts.get(c).to_string(), r.total.to_string());
        for r in &self.rows {
            out.push_str(&line(r));
            out.push('\n');
        }
        out.push_str(&rule);
        out.push('\n');
        out.push_str(&line(&self.totals));
        out.push('\n');
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbering_round_trips() {
        for (i, c) in Category::ALL.iter().enumerate() {
            assert_eq!(c.number(), i + 1);
            assert_eq!(Category::from_number(i + 1), Some(*c));
        }
        assert_eq!(Category::from_number(0), None);
        assert_eq!(Category::from_number(9), None);
    }

    #[test]
    fn counts_follow_findings() {
        let r = ErrorReport::from_findings(
            vec![
                Finding::new(Category::Structural, None, "x"),
                Finding::new(Category::UnitConversion, Some(Span::new(3, 4)), "y"),
                Finding::new(Category::Structural, None, "z"),
            ],
            vec![],
        );
        assert_eq!(r.count(Category::Structural), 2);
        assert_eq!(r.count(Category::UnitConversion), 1);
        assert_eq!(r.total, 3);
        assert_eq!(r.findings[0].category, Category::UnitConversion);
    }

    #[test]
    fn zero_report_gives_a_row_of_zeros() {
        let t = tabulate(&[("m".into(), ErrorReport::default())]);
        assert_eq!(t.rows[0].counts.as_array(), [0; 8]);
        let text = t.to_text();
        let row = text.lines().find(|l| l.starts_with("m ")).unwrap();
        let nums: Vec<&str> = row.split(|c: char| c == '|' || c.is_whitespace()).filter(|s| !s.is_empty()).collect();
        assert_eq!(nums, ["m", "0", "0", "0", "0", "0", "0", "0", "0", "0"]);
    }

    #[test]
    fn groups_are_four_three_one() {
        let sizes: Vec<usize> = COLUMN_GROUPS.iter().map(|(_, c)| c.len()).collect();
        assert_eq!(sizes, [4, 3, 1]);
        let flat: Vec<Category> = COLUMN_GROUPS.iter().flat_map(|(_, c)| c.iter().copied()).collect();
        assert_eq!(flat, Category::ALL);
    }

    #[test]
    fn totals_sum_componentwise() {
        let mk = |f: Vec<Finding>| ErrorReport::from_findings(f, vec![]);
        let a = mk(vec![Finding::new(Category::GeneralSyntax, None, "")]);
        let b = mk(vec![
            Finding::new(Category::GeneralSyntax, None, ""),
            Finding::new(Category::IncorrectValue, None, ""),
        ]);
        let c = mk(vec![]);
        let t = tabulate(&[("a".into(), a), ("b".into(), b), ("c".into(), c)]);
        assert_eq!(t.rows.len(), 3);
        assert_eq!(t.totals.counts.general_syntax, 2);
        assert_eq!(t.totals.counts.incorrect_value, 1);
        assert_eq!(t.totals.total, 3);
        let json: Table = serde_json::from_str(&t.to_json()).unwrap();
        assert_eq!(json, t);
    }
}
