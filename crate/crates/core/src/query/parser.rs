//! Parser for the query dialect:
//!
//! ```text
//! SELECT item [, item]* FROM t [(NATURAL JOIN | ,) t]*
//!     [WHERE col op literal [AND col op literal]*]
//!     [GROUP BY col [, col]*] [;]
//! item := COUNT(*) | SUM(col) | AVG(col) | col
//! op   := = | != | <> | < | <= | > | >=
//! ```
//!
//! Tables are joined along the schema's foreign keys; the join graph must
//! be a tree. Columns may be qualified as `table.column`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Value;
use crate::schema::{AnnotatedSchema, ColumnType};

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ColumnRef {
    pub table: String,
    pub column: String,
}

impl std::fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}.{}", self.table, self.column)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    /// NULL never satisfies a comparison.
    pub fn eval(self, lhs: &Value, rhs: &Value) -> bool {
        if lhs.is_null() || rhs.is_null() {
            return false;
        }
        let ord = match (lhs.as_f64(), rhs.as_f64(), lhs, rhs) {
            (_, _, Value::Str(a), Value::Str(b)) => a.cmp(b),
            (Some(a), Some(b), _, _) => a.total_cmp(&b),
            _ => return matches!(self, CmpOp::Ne),
        };
        use std::cmp::Ordering::*;
        match self {
            CmpOp::Eq => ord == Equal,
            CmpOp::Ne => ord != Equal,
            CmpOp::Lt => ord == Less,
            CmpOp::Le => ord != Greater,
            CmpOp::Gt => ord == Greater,
            CmpOp::Ge => ord != Less,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    pub column: ColumnRef,
    pub op: CmpOp,
    pub value: Value,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Aggregate {
    Count,
    Sum(ColumnRef),
    Avg(ColumnRef),
    /// No aggregate: only row statistics are reported.
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateQuery {
    pub tables: Vec<String>,
    pub filters: Vec<Predicate>,
    pub group_by: Vec<ColumnRef>,
    pub aggregate: Aggregate,
}

impl AggregateQuery {
    /// Columns whose values decide whether a row belongs to a result group.
    pub fn membership_columns(&self) -> Vec<&ColumnRef> {
        let mut v: Vec<&ColumnRef> = self.filters.iter().map(|p| &p.column).collect();
        v.extend(self.group_by.iter());
        v
    }

    pub fn aggregate_column(&self) -> Option<&ColumnRef> {
        match &self.aggregate {
            Aggregate::Sum(c) | Aggregate::Avg(c) => Some(c),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Str(String),
    Num(f64),
    Sym(&'static str),
}

fn lex(text: &str) -> Result<Vec<(usize, Tok)>> {
    let b = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < b.len() {
        let c = b[i] as char;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c == '\'' {
            let mut s = String::new();
            i += 1;
            loop {
                match b.get(i) {
                    None => return Err(Error::Parse { pos: start, msg: "unterminated string".into() }),
                    Some(b'\'') if b.get(i + 1) == Some(&b'\'') => {
                        s.push('\'');
                        i += 2;
                    }
                    Some(b'\'') => {
                        i += 1;
                        break;
                    }
                    Some(_) => {
                        let ch = text[i..].chars().next().unwrap();
                        s.push(ch);
                        i += ch.len_utf8();
                    }
                }
            }
            out.push((start, Tok::Str(s)));
        } else if c.is_ascii_digit() || (c == '-' && b.get(i + 1).is_some_and(|d| d.is_ascii_digit() || *d == b'.')) || (c == '.' && b.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            i += 1;
            while i < b.len() && (b[i].is_ascii_digit() || b[i] == b'.' || b[i] == b'e' || b[i] == b'E' || ((b[i] == b'-' || b[i] == b'+') && matches!(b[i - 1], b'e' | b'E'))) {
                i += 1;
            }
            let n: f64 = text[start..i]
                .parse()
                .map_err(|_| Error::Parse { pos: start, msg: format!("bad number {}", &text[start..i]) })?;
            out.push((start, Tok::Num(n)));
        } else if c.is_alphabetic() || c == '_' || c == '"' {
            if c == '"' {
                let end = text[i + 1..]
                    .find('"')
                    .ok_or_else(|| Error::Parse { pos: start, msg: "unterminated identifier".into() })?;
                out.push((start, Tok::Ident(text[i + 1..i + 1 + end].to_string())));
                i += end + 2;
                continue;
            }
            while i < b.len() && ((b[i] as char).is_alphanumeric() || b[i] == b'_' || b[i] == b'.') {
                i += 1;
            }
            out.push((start, Tok::Ident(text[start..i].to_string())));
        } else {
            let two = text.get(i..i + 2).unwrap_or("");
            let sym: &'static str = match two {
                "<=" => "<=",
                ">=" => ">=",
                "!=" => "!=",
                "<>" => "<>",
                _ => match c {
                    '(' => "(",
                    ')' => ")",
                    ',' => ",",
                    '*' => "*",
                    '=' => "=",
                    '<' => "<",
                    '>' => ">",
                    ';' => ";",
                    _ => return Err(Error::Parse { pos: i, msg: format!("unexpected character {c:?}") }),
                },
            };
            i += sym.len();
            out.push((start, Tok::Sym(sym)));
        }
    }
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(usize, Tok)>,
    at: usize,
    len: usize,
    schema: &'a AnnotatedSchema,
}

enum Item {
    Agg(String, Option<String>),
    Col(String),
}

impl<'a> Parser<'a> {
    fn pos(&self) -> usize {
        self.toks.get(self.at).map(|t| t.0).unwrap_or(self.len)
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(Error::Parse { pos: self.pos(), msg: msg.into() })
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.at).map(|t| &t.1)
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(s)) if s.eq_ignore_ascii_case(kw))
    }

    fn kw(&mut self, kw: &str) -> Result<()> {
        if self.is_kw(kw) {
            self.at += 1;
            Ok(())
        } else {
            self.err(format!("expected {kw}"))
        }
    }

    fn sym(&mut self, s: &str) -> Result<()> {
        if self.peek() == Some(&Tok::Sym(match s {
            "(" => "(",
            ")" => ")",
            "*" => "*",
            _ => unreachable!(),
        })) {
            self.at += 1;
            Ok(())
        } else {
            self.err(format!("expected {s}"))
        }
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        if matches!(self.peek(), Some(Tok::Sym(x)) if *x == s) {
            self.at += 1;
            true
        } else {
            false
        }
    }

    fn ident(&mut self) -> Result<String> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.at += 1;
                Ok(s)
            }
            _ => self.err("expected a name"),
        }
    }

    fn item(&mut self) -> Result<Item> {
        let name = self.ident()?;
        let upper = name.to_ascii_uppercase();
        if matches!(upper.as_str(), "COUNT" | "SUM" | "AVG") && matches!(self.peek(), Some(Tok::Sym("("))) {
            self.sym("(")?;
            let arg = if self.eat_sym("*") {
                None
            } else {
                Some(self.ident()?)
            };
            self.sym(")")?;
            if upper == "COUNT" && arg.is_some() {
                return self.err("only COUNT(*) is supported");
            }
            if upper != "COUNT" && arg.is_none() {
                return self.err(format!("{upper} needs a column"));
            }
            return Ok(Item::Agg(upper, arg));
        }
        Ok(Item::Col(name))
    }

    fn literal(&mut self) -> Result<Value> {
        let v = match self.peek() {
            Some(Tok::Str(s)) => Value::Str(s.clone()),
            Some(Tok::Num(n)) => Value::Num(*n),
            Some(Tok::Ident(s)) if s.eq_ignore_ascii_case("null") => Value::Null,
            _ => return self.err("expected a literal"),
        };
        self.at += 1;
        Ok(v)
    }

    fn op(&mut self) -> Result<CmpOp> {
        let op = match self.peek() {
            Some(Tok::Sym("=")) => CmpOp::Eq,
            Some(Tok::Sym("!=")) | Some(Tok::Sym("<>")) => CmpOp::Ne,
            Some(Tok::Sym("<")) => CmpOp::Lt,
            Some(Tok::Sym("<=")) => CmpOp::Le,
            Some(Tok::Sym(">")) => CmpOp::Gt,
            Some(Tok::Sym(">=")) => CmpOp::Ge,
            _ => return self.err("expected a comparison operator"),
        };
        self.at += 1;
        Ok(op)
    }

    fn resolve(&self, name: &str, tables: &[String]) -> Result<ColumnRef> {
        if let Some((t, c)) = name.split_once('.') {
            if !tables.iter().any(|x| x == t) {
                return Err(Error::Query(format!("table {t} is not in the FROM clause")));
            }
            let def = self.schema.table_or_err(t)?;
            if def.column(c).is_none() {
                return Err(Error::Query(format!("unknown column {name}")));
            }
            return Ok(ColumnRef { table: t.into(), column: c.into() });
        }
        let hits: Vec<&String> = tables
            .iter()
            .filter(|t| self.schema.table(t).is_some_and(|d| d.column(name).is_some()))
            .collect();
        match hits.as_slice() {
            [t] => Ok(ColumnRef { table: (*t).clone(), column: name.into() }),
            [] => Err(Error::Query(format!("unknown column {name}"))),
            _ => Err(Error::Query(format!("column {name} is ambiguous; qualify it with a table name"))),
        }
    }
}

pub fn parse_query(text: &str, schema: &AnnotatedSchema) -> Result<AggregateQuery> {
    let mut p = Parser { toks: lex(text)?, at: 0, len: text.len(), schema };
    p.kw("SELECT")?;
    let mut items = vec![p.item()?];
    while p.eat_sym(",") {
        items.push(p.item()?);
    }
    p.kw("FROM")?;
    let mut tables = vec![p.ident()?];
    loop {
        if p.eat_sym(",") {
            tables.push(p.ident()?);
        } else if p.is_kw("NATURAL") {
            p.at += 1;
            p.kw("JOIN")?;
            tables.push(p.ident()?);
        } else if p.is_kw("JOIN") {
            p.at += 1;
            tables.push(p.ident()?);
        } else {
            break;
        }
    }
    for t in &tables {
        if schema.table(t).is_none() {
            return Err(Error::Query(format!("unknown table {t}")));
        }
    }
    let mut raw_filters = Vec::new();
    if p.is_kw("WHERE") {
        p.at += 1;
        loop {
            let c = p.ident()?;
            let op = p.op()?;
            let v = p.literal()?;
            raw_filters.push((c, op, v));
            if p.is_kw("AND") {
                p.at += 1;
            } else {
                break;
            }
        }
    }
    let mut raw_groups = Vec::new();
    if p.is_kw("GROUP") {
        p.at += 1;
        p.kw("BY")?;
        raw_groups.push(p.ident()?);
        while p.eat_sym(",") {
            raw_groups.push(p.ident()?);
        }
    }
    p.eat_sym(";");
    if p.at < p.toks.len() {
        return p.err("unexpected trailing input");
    }
    check_join_tree(schema, &tables)?;
    let filters = raw_filters
        .into_iter()
        .map(|(c, op, value)| Ok(Predicate { column: p.resolve(&c, &tables)?, op, value }))
        .collect::<Result<Vec<_>>>()?;
    let group_by = raw_groups
        .iter()
        .map(|c| p.resolve(c, &tables))
        .collect::<Result<Vec<_>>>()?;
    let mut aggregate = Aggregate::None;
    for item in items {
        match item {
            Item::Agg(kind, arg) => {
                if aggregate != Aggregate::None {
                    return Err(Error::Query("only one aggregate per query is supported".into()));
                }
                aggregate = match (kind.as_str(), arg) {
                    ("COUNT", _) => Aggregate::Count,
                    (k, Some(a)) => {
                        let c = p.resolve(&a, &tables)?;
                        let ty = schema.table_or_err(&c.table)?.column(&c.column).unwrap().ty;
                        if ty != ColumnType::Continuous {
                            return Err(Error::Query(format!("{k} needs a continuous column, {c} is not")));
                        }
                        if k == "SUM" {
                            Aggregate::Sum(c)
                        } else {
                            Aggregate::Avg(c)
                        }
                    }
                    _ => unreachable!("checked while parsing"),
                };
            }
            Item::Col(c) => {
                let c = p.resolve(&c, &tables)?;
                if !group_by.contains(&c) {
                    return Err(Error::Query(format!("selected column {c} must appear in GROUP BY")));
                }
            }
        }
    }
    Ok(AggregateQuery { tables, filters, group_by, aggregate })
}

/// The tables must be distinct and joined by foreign keys into a tree.
pub fn check_join_tree(schema: &AnnotatedSchema, tables: &[String]) -> Result<()> {
    let set: std::collections::BTreeSet<&String> = tables.iter().collect();
    if set.len() != tables.len() {
        return Err(Error::Query("a table appears twice in the FROM clause".into()));
    }
    let edges: Vec<(&str, &str)> = schema
        .relationships
        .iter()
        .filter(|fk| set.contains(&fk.child_table) && set.contains(&fk.parent_table))
        .map(|fk| (fk.child_table.as_str(), fk.parent_table.as_str()))
        .collect();
    let mut reached = vec![tables[0].as_str()];
    let mut frontier = vec![tables[0].as_str()];
    while let Some(t) = frontier.pop() {
        for &(a, b) in &edges {
            let other = if a == t { b } else if b == t { a } else { continue };
            if !reached.contains(&other) {
                reached.push(other);
                frontier.push(other);
            }
        }
    }
    if reached.len() != tables.len() {
        return Err(Error::Query(format!("no join path connects {}", tables.join(", "))));
    }
    if edges.len() != tables.len() - 1 {
        return Err(Error::Query("the join graph is cyclic".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::tests::housing;

    #[test]
    fn housing_sum_query() {
        let q = parse_query("SELECT SUM(price) FROM apartment WHERE room_type='Entire home/apt'", &housing()).unwrap();
        assert_eq!(q.tables, vec!["apartment"]);
        assert_eq!(q.aggregate, Aggregate::Sum(ColumnRef { table: "apartment".into(), column: "price".into() }));
        assert_eq!(q.filters[0].value, Value::Str("Entire home/apt".into()));
    }

    #[test]
    fn three_way_join_and_grouping() {
        let q = parse_query(
            "select density, count(*) from apartment natural join neighborhood natural join landlord \
             where since >= 2000 and room_type <> 'shared' group by density;",
            &housing(),
        )
        .unwrap();
        assert_eq!(q.tables.len(), 3);
        assert_eq!(q.aggregate, Aggregate::Count);
        assert_eq!(q.filters[0].op, CmpOp::Ge);
        assert_eq!(q.filters[1].op, CmpOp::Ne);
        assert_eq!(q.group_by[0].table, "neighborhood");
    }

    #[test]
    fn rejects_bad_queries() {
        let s = housing();
        // Landlord and neighborhood share no foreign key.
        assert!(matches!(parse_query("SELECT AVG(since) FROM landlord, neighborhood", &s), Err(Error::Query(_))));
        assert!(matches!(parse_query("SELECT AVG(nope) FROM apartment", &s), Err(Error::Query(_))));
        assert!(matches!(parse_query("SELECT COUNT(*) FROM apartment NATURAL JOIN landlord WHERE id = 'x'", &s), Err(Error::Query(_))));
        assert!(matches!(parse_query("SELECT AVG(room_type) FROM apartment", &s), Err(Error::Query(_))));
        assert!(matches!(parse_query("SELECT COUNT(* FROM apartment", &s), Err(Error::Parse { .. })));
        assert!(matches!(parse_query("SELECT COUNT(*) FROM apartment WHERE price > 'x", &s), Err(Error::Parse { .. })));
        assert!(matches!(parse_query("SELECT room_type, COUNT(*) FROM apartment", &s), Err(Error::Query(_))));
        assert!(matches!(parse_query("SELECT COUNT(*) FROM apartment, apartment", &s), Err(Error::Query(_))));
    }

    #[test]
    fn comparison_semantics() {
        assert!(CmpOp::Lt.eval(&Value::Num(1.0), &Value::Num(2.0)));
        assert!(CmpOp::Eq.eval(&Value::Str("a".into()), &Value::Str("a".into())));
        assert!(!CmpOp::Eq.eval(&Value::Null, &Value::Null));
        assert!(!CmpOp::Ne.eval(&Value::Null, &Value::Num(1.0)));
        assert!(CmpOp::Eq.eval(&Value::Num(3.0), &Value::Str("3".into())));
    }
}
