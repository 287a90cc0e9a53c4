//! Built-in mini-language front-end.
//!
//! A one-line Python-flavoured function grammar, enough to make the whole
//! pipeline testable without an external parser:
//!
//! ```text
//! function := "def" NAME "(" [params] ")" ":" stmt (";" stmt)*
//! stmt     := "return" expr
//!           | "if" expr ":" stmt ["else" ":" stmt]
//!           | NAME "=" expr
//!           | call
//! expr     := additive [("<"|">"|"<="|">="|"=="|"!=") additive]
//! additive := term (("+"|"-") term)*
//! term     := factor (("*"|"/") factor)*
//! factor   := NUM | NAME | call | "(" expr ")"
//! call     := NAME "(" [expr ("," expr)*] ")"
//! ```
//!
//! Node types produced: FunctionDef, Params, If, Return, Assign, Call,
//! BinOp{+,-,*,/,<,>,<=,>=,==,!=}, Name, Num. The function name appears
//! only in the lexical token stream, not in the tree.

use crate::ast::AstNode;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(String),
    Punct(&'static str),
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

fn err(line: usize, col: usize, msg: impl Into<String>) -> Error {
    Error::Syntax { line, col, msg: msg.into() }
}

fn lex(source: &str) -> Result<Vec<Spanned>> {
    let mut out = Vec::new();
    let mut line = 1usize;
    let mut col = 1usize;
    let mut chars = source.chars().peekable();
    while let Some(&ch) = chars.peek() {
        let (tl, tc) = (line, col);
        let bump = |c: char, line: &mut usize, col: &mut usize| {
            if c == '\n' {
                *line += 1;
                *col = 1;
            } else {
                *col += 1;
            }
        };
        if ch.is_whitespace() {
            chars.next();
            bump(ch, &mut line, &mut col);
            continue;
        }
        if ch.is_ascii_alphabetic() || ch == '_' {
            let mut s = String::new();
            while let Some(&c) = chars.peek() {
                if c.is_ascii_alphanumeric() || c == '_' {
                    s.push(c);
                    chars.next();
                    bump(c, &mut line, &mut col);
                } else {
                    break;
                }
            }
            out.push(Spanned { tok: Tok::Ident(s), line: tl, col: tc });
            continue;
        }
        if ch.is_ascii_digit() {
            let mut s = String::new();
            while let Some(&c) = chars.peek() {
                if c.is_ascii_digit() {
                    s.push(c);
                    chars.next();
                    bump(c, &mut line, &mut col);
                } else {
                    break;
                }
            }
            out.push(Spanned { tok: Tok::Num(s), line: tl, col: tc });
            continue;
        }
        chars.next();
        bump(ch, &mut line, &mut col);
        let two = |second: char, chars: &mut std::iter::Peekable<std::str::Chars>| -> bool {
            if chars.peek() == Some(&second) {
                chars.next();
                true
            } else {
                false
            }
        };
        let p: &'static str = match ch {
            '(' => "(",
            ')' => ")",
            ':' => ":",
            ';' => ";",
            ',' => ",",
            '+' => "+",
            '-' => "-",
            '*' => "*",
            '/' => "/",
            '=' => {
                if two('=', &mut chars) {
                    col += 1;
                    "=="
                } else {
                    "="
                }
            }
            '!' => {
                if two('=', &mut chars) {
                    col += 1;
                    "!="
                } else {
                    return Err(err(tl, tc, "expected '=' after '!'"));
                }
            }
            '<' => {
                if two('=', &mut chars) {
                    col += 1;
                    "<="
                } else {
                    "<"
                }
            }
            '>' => {
                if two('=', &mut chars) {
                    col += 1;
                    ">="
                } else {
                    ">"
                }
            }
            other => return Err(err(tl, tc, format!("unexpected character {:?}", other))),
        };
        out.push(Spanned { tok: Tok::Punct(p), line: tl, col: tc });
    }
    Ok(out)
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|s| &s.tok)
    }

    fn here(&self) -> (usize, usize) {
        self.toks
            .get(self.pos)
            .or_else(|| self.toks.last())
            .map(|s| (s.line, s.col))
            .unwrap_or((1, 1))
    }

    fn next(&mut self) -> Option<Spanned> {
        let t = self.toks.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect_punct(&mut self, p: &str) -> Result<()> {
        let (line, col) = self.here();
        match self.next() {
            Some(Spanned { tok: Tok::Punct(q), .. }) if q == p => Ok(()),
            Some(s) => Err(err(s.line, s.col, format!("expected {:?}, found {:?}", p, s.tok))),
            None => Err(err(line, col, format!("expected {:?}, found end of input", p))),
        }
    }

    fn expect_ident(&mut self) -> Result<String> {
        let (line, col) = self.here();
        match self.next() {
            Some(Spanned { tok: Tok::Ident(s), .. }) => Ok(s),
            Some(s) => Err(err(s.line, s.col, format!("expected identifier, found {:?}", s.tok))),
            None => Err(err(line, col, "expected identifier, found end of input")),
        }
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<()> {
        let (line, col) = self.here();
        match self.next() {
            Some(Spanned { tok: Tok::Ident(s), .. }) if s == kw => Ok(()),
            Some(s) => Err(err(s.line, s.col, format!("expected {:?}, found {:?}", kw, s.tok))),
            None => Err(err(line, col, format!("expected {:?}, found end of input", kw))),
        }
    }

    fn at_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(s)) if s == kw)
    }

    fn at_punct(&self, p: &str) -> bool {
        matches!(self.peek(), Some(Tok::Punct(q)) if *q == p)
    }

    fn function(&mut self) -> Result<AstNode> {
        self.expect_keyword("def")?;
        let name = self.expect_ident()?;
        if ["def", "return", "if", "else"].contains(&name.as_str()) {
            let (line, col) = self.here();
            return Err(err(line, col, format!("keyword {:?} cannot name a function", name)));
        }
        self.expect_punct("(")?;
        let mut params = Vec::new();
        if !self.at_punct(")") {
            loop {
                let p = self.expect_ident()?;
                params.push(AstNode::leaf("Name", p));
                if self.at_punct(",") {
                    self.next();
                } else {
                    break;
                }
            }
        }
        self.expect_punct(")")?;
        self.expect_punct(":")?;
        let params_node = if params.is_empty() {
            AstNode::empty_leaf("Params")
        } else {
            AstNode::internal("Params", params)
        };
        let mut children = vec![params_node];
        children.push(self.statement()?);
        while self.at_punct(";") {
            self.next();
            children.push(self.statement()?);
        }
        if let Some(s) = self.toks.get(self.pos) {
            return Err(err(s.line, s.col, format!("trailing input {:?}", s.tok)));
        }
        Ok(AstNode::internal("FunctionDef", children))
    }

    fn statement(&mut self) -> Result<AstNode> {
        if self.at_keyword("return") {
            self.next();
            let e = self.expr()?;
            return Ok(AstNode::internal("Return", vec![e]));
        }
        if self.at_keyword("if") {
            self.next();
            let cond = self.expr()?;
            self.expect_punct(":")?;
            let then_branch = self.statement()?;
            if self.at_keyword("else") {
                self.next();
                self.expect_punct(":")?;
                let else_branch = self.statement()?;
                return Ok(AstNode::internal("If", vec![cond, then_branch, else_branch]));
            }
            return Ok(AstNode::internal("If", vec![cond, then_branch]));
        }
        let (line, col) = self.here();
        match self.peek() {
            Some(Tok::Ident(_)) => {
                let name = self.expect_ident()?;
                if self.at_punct("=") {
                    self.next();
                    let e = self.expr()?;
                    return Ok(AstNode::internal(
                        "Assign",
                        vec![AstNode::leaf("Name", name), e],
                    ));
                }
                if self.at_punct("(") {
                    return self.call(name);
                }
                let (l, c) = self.here();
                Err(err(l, c, "expected '=' or '(' in statement"))
            }
            other => Err(err(line, col, format!("expected statement, found {:?}", other))),
        }
    }

    fn call(&mut self, name: String) -> Result<AstNode> {
        self.expect_punct("(")?;
        let mut children = vec![AstNode::leaf("Name", name)];
        if !self.at_punct(")") {
            loop {
                children.push(self.expr()?);
                if self.at_punct(",") {
                    self.next();
                } else {
                    break;
                }
            }
        }
        self.expect_punct(")")?;
        Ok(AstNode::internal("Call", children))
    }

    fn expr(&mut self) -> Result<AstNode> {
        let lhs = self.additive()?;
        for cmp in ["<=", ">=", "==", "!=", "<", ">"] {
            if self.at_punct(cmp) {
                self.next();
                let rhs = self.additive()?;
                return Ok(AstNode::internal(format!("BinOp{cmp}"), vec![lhs, rhs]));
            }
        }
        Ok(lhs)
    }

    fn additive(&mut self) -> Result<AstNode> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.at_punct("+") {
                "+"
            } else if self.at_punct("-") {
                "-"
            } else {
                return Ok(lhs);
            };
            self.next();
            let rhs = self.term()?;
            lhs = AstNode::internal(format!("BinOp{op}"), vec![lhs, rhs]);
        }
    }

    fn term(&mut self) -> Result<AstNode> {
        let mut lhs = self.factor()?;
        loop {
            let op = if self.at_punct("*") {
                "*"
            } else if self.at_punct("/") {
                "/"
            } else {
                return Ok(lhs);
            };
            self.next();
            let rhs = self.factor()?;
            lhs = AstNode::internal(format!("BinOp{op}"), vec![lhs, rhs]);
        }
    }

    fn factor(&mut self) -> Result<AstNode> {
        let (line, col) = self.here();
        match self.next() {
            Some(Spanned { tok: Tok::Num(n), .. }) => Ok(AstNode::leaf("Num", n)),
            Some(Spanned { tok: Tok::Ident(name), .. }) => {
                if self.at_punct("(") {
                    self.call(name)
                } else {
                    Ok(AstNode::leaf("Name", name))
                }
            }
            Some(Spanned { tok: Tok::Punct("("), .. }) => {
                let e = self.expr()?;
                self.expect_punct(")")?;
                Ok(e)
            }
            Some(s) => Err(err(s.line, s.col, format!("expected expression, found {:?}", s.tok))),
            None => Err(err(line, col, "expected expression, found end of input")),
        }
    }
}

/// Parse mini-language source into an AST.
pub fn parse_minilang(source: &str) -> Result<AstNode> {
    let toks = lex(source)?;
    if toks.is_empty() {
        return Err(err(1, 1, "empty input"));
    }
    let mut p = Parser { toks, pos: 0 };
    p.function()
}

/// Render a tree back into canonical mini-language source. The function
/// name is not stored in the tree, so a fixed placeholder is emitted;
/// parsing the output reproduces the input tree.
pub fn pretty_print(ast: &AstNode) -> Result<String> {
    if ast.node_type != "FunctionDef" || ast.children.is_empty() {
        return Err(Error::InvalidData("pretty_print expects a FunctionDef root".into()));
    }
    let params = &ast.children[0];
    let names: Vec<&str> = params
        .children
        .iter()
        .filter_map(|c| c.token.as_deref())
        .collect();
    let mut out = format!("def f({}):", names.join(", "));
    let stmts: Vec<String> = ast.children[1..]
        .iter()
        .map(print_stmt)
        .collect::<Result<Vec<_>>>()?;
    out.push(' ');
    out.push_str(&stmts.join("; "));
    Ok(out)
}

fn print_stmt(stmt: &AstNode) -> Result<String> {
    match stmt.node_type.as_str() {
        "Return" => Ok(format!("return {}", print_expr(&stmt.children[0], 0)?)),
        "Assign" => Ok(format!(
            "{} = {}",
            stmt.children[0].token.as_deref().unwrap_or("_"),
            print_expr(&stmt.children[1], 0)?
        )),
        "If" => {
            let cond = print_expr(&stmt.children[0], 0)?;
            let then_branch = print_stmt(&stmt.children[1])?;
            if let Some(else_node) = stmt.children.get(2) {
                Ok(format!("if {}: {} else: {}", cond, then_branch, print_stmt(else_node)?))
            } else {
                Ok(format!("if {}: {}", cond, then_branch))
            }
        }
        "Call" => print_expr(stmt, 0),
        other => Err(Error::InvalidData(format!("unexpected statement node {other:?}"))),
    }
}

/// Precedence levels: comparison 1, additive 2, term 3, atoms 4.
fn precedence(node: &AstNode) -> u8 {
    match node.node_type.as_str() {
        t if t.starts_with("BinOp") => match &t[5..] {
            "+" | "-" => 2,
            "*" | "/" => 3,
            _ => 1,
        },
        _ => 4,
    }
}

fn print_expr(node: &AstNode, min_prec: u8) -> Result<String> {
    let rendered = match node.node_type.as_str() {
        "Name" | "Num" => node.token.clone().unwrap_or_default(),
        "Call" => {
            let callee = node.children[0].token.as_deref().unwrap_or("_");
            let args: Vec<String> = node.children[1..]
                .iter()
                .map(|a| print_expr(a, 0))
                .collect::<Result<Vec<_>>>()?;
            format!("{}({})", callee, args.join(", "))
        }
        t if t.starts_with("BinOp") => {
            let op = &t[5..];
            let prec = precedence(node);
            let lhs = print_expr(&node.children[0], prec)?;
            let rhs = print_expr(&node.children[1], prec + 1)?;
            format!("{lhs} {op} {rhs}")
        }
        other => return Err(Error::InvalidData(format!("unexpected expression node {other:?}"))),
    };
    if precedence(node) < min_prec {
        Ok(format!("({rendered})"))
    } else {
        Ok(rendered)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::AstNode;

    #[test]
    fn parse_add_function() {
        let ast = parse_minilang("def f(a,b): return a+b").unwrap();
        let expected = AstNode::internal(
            "FunctionDef",
            vec![
                AstNode::internal(
                    "Params",
                    vec![AstNode::leaf("Name", "a"), AstNode::leaf("Name", "b")],
                ),
                AstNode::internal(
                    "Return",
                    vec![AstNode::internal(
                        "BinOp+",
                        vec![AstNode::leaf("Name", "a"), AstNode::leaf("Name", "b")],
                    )],
                ),
            ],
        );
        assert_eq!(ast, expected);
    }

    #[test]
    fn parse_no_params() {
        let ast = parse_minilang("def g(): return 1").unwrap();
        let expected = AstNode::internal(
            "FunctionDef",
            vec![
                AstNode::empty_leaf("Params"),
                AstNode::internal("Return", vec![AstNode::leaf("Num", "1")]),
            ],
        );
        assert_eq!(ast, expected);
    }

    #[test]
    fn syntax_error_reports_position() {
        let e = parse_minilang("def f(:").unwrap_err();
        match e {
            Error::Syntax { line, col, .. } => {
                assert_eq!(line, 1);
                assert!(col >= 7);
            }
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn parse_if_else_and_ops() {
        let ast = parse_minilang("def m(a, b): if a >= b: return a else: return b").unwrap();
        let if_node = &ast.children[1];
        assert_eq!(if_node.node_type, "If");
        assert_eq!(if_node.children.len(), 3);
        assert_eq!(if_node.children[0].node_type, "BinOp>=");
    }

    #[test]
    fn parse_assign_and_call() {
        let ast = parse_minilang("def h(x): y = g(x, 2) * 3; return y").unwrap();
        assert_eq!(ast.children.len(), 3);
        assert_eq!(ast.children[1].node_type, "Assign");
        assert_eq!(ast.children[2].node_type, "Return");
    }

    #[test]
    fn pretty_print_roundtrip() {
        let sources = [
            "def f(a,b): return a+b",
            "def g(): return 1",
            "def m(a, b): if a >= b: return a else: return b",
            "def h(x): y = g(x, 2) * 3; return y",
            "def p(a, b, c): return (a + b) * c",
            "def q(a): return a * a + 1",
            "def r(a): log(a); return a / 2",
        ];
        for src in sources {
            let ast = parse_minilang(src).unwrap();
            let printed = pretty_print(&ast).unwrap();
            let reparsed = parse_minilang(&printed)
                .unwrap_or_else(|e| panic!("reparse of {printed:?} failed: {e}"));
            assert_eq!(ast, reparsed, "round trip failed for {src:?} -> {printed:?}");
        }
    }

    #[test]
    fn parens_preserved_when_needed() {
        let ast = parse_minilang("def p(a, b, c): return (a + b) * c").unwrap();
        let printed = pretty_print(&ast).unwrap();
        assert!(printed.contains("(a + b) * c"), "{printed}");
    }
}
