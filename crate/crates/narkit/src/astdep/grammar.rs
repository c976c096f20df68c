//! Lexer and recursive-descent parser for the C-style mini language.
//!
//! The language covers function definitions, declarations, assignments,
//! `if`/`while`/`return` statements, and an expression grammar with the
//! usual precedence levels. Bodies of `if`/`while` are optional so that
//! header fragments such as `if ( x != null )` parse on their own.

use super::tree::AstTree;
use super::{AstDepError, GrammarProvider};

/// Lexical category of a token; doubles as the leaf node type.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeafKind {
    Ident,
    Number,
    Keyword,
    TypeName,
    Literal,
    Operator,
    Punct,
    Other,
}

impl LeafKind {
    pub fn node_type(self) -> &'static str {
        match self {
            LeafKind::Ident => "identifier",
            LeafKind::Number => "number",
            LeafKind::Keyword => "keyword",
            LeafKind::TypeName => "type",
            LeafKind::Literal => "literal",
            LeafKind::Operator => "operator",
            LeafKind::Punct => "punct",
            LeafKind::Other => "token",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexToken {
    pub text: String,
    pub offset: usize,
    pub kind: LeafKind,
}

const KEYWORDS: &[&str] = &["if", "else", "while", "return"];
const TYPE_NAMES: &[&str] = &["int", "float", "bool", "void"];
const LITERALS: &[&str] = &["null", "true", "false"];

/// Tokenizes `text`. Whitespace separates tokens, `//` comments are dropped,
/// multi-character operators are greedy, and any other character becomes a
/// single-character token, so lexing never fails.
pub fn lex_text(text: &str) -> Vec<LexToken> {
    let bytes = text.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        if c == '/' && i + 1 < bytes.len() && bytes[i + 1] == b'/' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        if c.is_ascii_alphabetic() || c == '_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            let word = &text[start..i];
            let kind = if KEYWORDS.contains(&word) {
                LeafKind::Keyword
            } else if TYPE_NAMES.contains(&word) {
                LeafKind::TypeName
            } else if LITERALS.contains(&word) {
                LeafKind::Literal
            } else {
                LeafKind::Ident
            };
            tokens.push(LexToken { text: word.to_string(), offset: start, kind });
            continue;
        }
        if c.is_ascii_digit() {
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            if i + 1 < bytes.len() && bytes[i] == b'.' && bytes[i + 1].is_ascii_digit() {
                i += 1;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
            }
            tokens.push(LexToken {
                text: text[start..i].to_string(),
                offset: start,
                kind: LeafKind::Number,
            });
            continue;
        }
        let two = if i + 1 < bytes.len() { &text[i..i + 2] } else { "" };
        if matches!(two, "==" | "!=" | "<=" | ">=" | "&&" | "||") {
            tokens.push(LexToken { text: two.to_string(), offset: start, kind: LeafKind::Operator });
            i += 2;
            continue;
        }
        let kind = match c {
            '+' | '-' | '*' | '/' | '%' | '<' | '>' | '=' | '!' => LeafKind::Operator,
            '(' | ')' | '{' | '}' | ';' | ',' | '.' => LeafKind::Punct,
            _ => LeafKind::Other,
        };
        let end = i + c.len_utf8();
        tokens.push(LexToken { text: text[i..end].to_string(), offset: start, kind });
        i = end;
    }
    tokens
}

/// The built-in mini-language grammar.
#[derive(Debug, Clone, Default)]
pub struct MiniGrammar;

impl MiniGrammar {
    pub fn new() -> Self {
        MiniGrammar
    }
}

impl GrammarProvider for MiniGrammar {
    fn name(&self) -> &str {
        "mini"
    }

    fn lex(&self, text: &str) -> Vec<LexToken> {
        lex_text(text)
    }

    fn parse(&self, text: &str) -> Result<AstTree, AstDepError> {
        let tokens = lex_text(text);
        let parser = Parser::new(&tokens);
        let tree = parser.parse_program()?;
        debug_assert!(tree.validate().is_ok(), "parser built an inconsistent tree");
        Ok(tree)
    }
}

struct Parser<'a> {
    tokens: &'a [LexToken],
    pos: usize,
    tree: AstTree,
}

impl<'a> Parser<'a> {
    fn new(tokens: &'a [LexToken]) -> Self {
        Parser { tokens, pos: 0, tree: AstTree::new() }
    }

    fn peek(&self) -> Option<&LexToken> {
        self.tokens.get(self.pos)
    }

    fn peek_at(&self, ahead: usize) -> Option<&LexToken> {
        self.tokens.get(self.pos + ahead)
    }

    fn peek_text(&self) -> &str {
        self.peek().map(|t| t.text.as_str()).unwrap_or("")
    }

    fn fail(&self, message: impl Into<String>) -> AstDepError {
        let offset = self
            .peek()
            .map(|t| t.offset)
            .or_else(|| self.tokens.last().map(|t| t.offset + t.text.len()))
            .unwrap_or(0);
        AstDepError::ParseFailure { offset, message: message.into() }
    }

    /// Consumes the current token as a leaf of the node under construction.
    fn bump(&mut self) -> usize {
        let tok = &self.tokens[self.pos];
        let leaf = self.tree.add_leaf(tok.kind.node_type(), self.pos, &tok.text);
        self.pos += 1;
        leaf
    }

    fn expect(&mut self, text: &str) -> Result<usize, AstDepError> {
        if self.peek_text() == text {
            Ok(self.bump())
        } else {
            Err(self.fail(format!("expected {:?}, found {:?}", text, self.peek_text())))
        }
    }

    fn expect_kind(&mut self, kind: LeafKind, what: &str) -> Result<usize, AstDepError> {
        match self.peek() {
            Some(t) if t.kind == kind => Ok(self.bump()),
            _ => Err(self.fail(format!("expected {}, found {:?}", what, self.peek_text()))),
        }
    }

    fn parse_program(mut self) -> Result<AstTree, AstDepError> {
        if self.tokens.is_empty() {
            return Err(self.fail("empty input"));
        }
        let mut items = Vec::new();
        while self.peek().is_some() {
            items.push(self.parse_item()?);
        }
        let root = self.tree.add_internal("program", items);
        self.tree.set_root(root);
        Ok(self.tree)
    }

    fn parse_item(&mut self) -> Result<usize, AstDepError> {
        // `type ident (` begins a function definition, anything else is a statement.
        if self.peek().map(|t| t.kind) == Some(LeafKind::TypeName)
            && self.peek_at(1).map(|t| t.kind) == Some(LeafKind::Ident)
            && self.peek_at(2).map(|t| t.text.as_str()) == Some("(")
        {
            return self.parse_function();
        }
        self.parse_statement()
    }

    fn parse_function(&mut self) -> Result<usize, AstDepError> {
        let mut children = vec![self.bump(), self.bump(), self.expect("(")?];
        if self.peek_text() != ")" {
            children.push(self.parse_param_list()?);
        }
        children.push(self.expect(")")?);
        children.push(self.parse_block()?);
        Ok(self.tree.add_internal("function", children))
    }

    fn parse_param_list(&mut self) -> Result<usize, AstDepError> {
        let mut children = vec![self.parse_param()?];
        while self.peek_text() == "," {
            children.push(self.bump());
            children.push(self.parse_param()?);
        }
        Ok(self.tree.add_internal("param list", children))
    }

    fn parse_param(&mut self) -> Result<usize, AstDepError> {
        let ty = self.expect_kind(LeafKind::TypeName, "type name")?;
        let name = self.expect_kind(LeafKind::Ident, "parameter name")?;
        Ok(self.tree.add_internal("param", vec![ty, name]))
    }

    fn parse_block(&mut self) -> Result<usize, AstDepError> {
        let mut children = vec![self.expect("{")?];
        while self.peek().is_some() && self.peek_text() != "}" {
            children.push(self.parse_statement()?);
        }
        children.push(self.expect("}")?);
        Ok(self.tree.add_internal("block", children))
    }

    fn starts_statement(&self) -> bool {
        match self.peek() {
            None => false,
            Some(t) => match t.kind {
                LeafKind::Keyword => t.text != "else",
                LeafKind::TypeName | LeafKind::Ident | LeafKind::Number | LeafKind::Literal => true,
                LeafKind::Operator => matches!(t.text.as_str(), "!" | "-"),
                LeafKind::Punct => matches!(t.text.as_str(), "{" | "("),
                LeafKind::Other => false,
            },
        }
    }

    fn parse_statement(&mut self) -> Result<usize, AstDepError> {
        match self.peek_text() {
            "{" => self.parse_block(),
            "return" => {
                let mut children = vec![self.bump()];
                if self.starts_expression() {
                    children.push(self.parse_expr()?);
                }
                if self.peek_text() == ";" {
                    children.push(self.bump());
                }
                Ok(self.tree.add_internal("return stmt", children))
            }
            "if" => {
                let mut children = vec![self.bump(), self.expect("(")?, self.parse_expr()?];
                children.push(self.expect(")")?);
                if self.starts_statement() {
                    children.push(self.parse_statement()?);
                    if self.peek_text() == "else" {
                        children.push(self.bump());
                        children.push(self.parse_statement()?);
                    }
                }
                Ok(self.tree.add_internal("if stmt", children))
            }
            "while" => {
                let mut children = vec![self.bump(), self.expect("(")?, self.parse_expr()?];
                children.push(self.expect(")")?);
                if self.starts_statement() {
                    children.push(self.parse_statement()?);
                }
                Ok(self.tree.add_internal("while stmt", children))
            }
            _ if self.peek().map(|t| t.kind) == Some(LeafKind::TypeName) => {
                let mut children = vec![self.bump(), self.expect_kind(LeafKind::Ident, "name")?];
                if self.peek_text() == "=" {
                    children.push(self.bump());
                    children.push(self.parse_expr()?);
                }
                if self.peek_text() == ";" {
                    children.push(self.bump());
                }
                Ok(self.tree.add_internal("decl stmt", children))
            }
            _ => {
                if !self.starts_expression() {
                    return Err(self.fail(format!("expected statement, found {:?}", self.peek_text())));
                }
                let mut children = vec![self.parse_expr()?];
                if self.peek_text() == ";" {
                    children.push(self.bump());
                }
                Ok(self.tree.add_internal("expr stmt", children))
            }
        }
    }

    fn starts_expression(&self) -> bool {
        match self.peek() {
            None => false,
            Some(t) => match t.kind {
                LeafKind::Ident | LeafKind::Number | LeafKind::Literal => true,
                LeafKind::Operator => matches!(t.text.as_str(), "!" | "-"),
                LeafKind::Punct => t.text == "(",
                _ => false,
            },
        }
    }

    fn parse_expr(&mut self) -> Result<usize, AstDepError> {
        self.parse_assign()
    }

    fn parse_assign(&mut self) -> Result<usize, AstDepError> {
        let lhs = self.parse_binary(0)?;
        if self.peek_text() == "=" {
            let eq = self.bump();
            let rhs = self.parse_assign()?;
            return Ok(self.tree.add_internal("assign expr", vec![lhs, eq, rhs]));
        }
        Ok(lhs)
    }

    /// Precedence-climbing over the binary operator tiers.
    fn parse_binary(&mut self, level: usize) -> Result<usize, AstDepError> {
        const TIERS: &[&[&str]] = &[
            &["||"],
            &["&&"],
            &["==", "!="],
            &["<", ">", "<=", ">="],
            &["+", "-"],
            &["*", "/", "%"],
        ];
        if level == TIERS.len() {
            return self.parse_unary();
        }
        let mut lhs = self.parse_binary(level + 1)?;
        while TIERS[level].contains(&self.peek_text()) {
            let op = self.bump();
            let rhs = self.parse_binary(level + 1)?;
            lhs = self.tree.add_internal("binary expr", vec![lhs, op, rhs]);
        }
        Ok(lhs)
    }

    fn parse_unary(&mut self) -> Result<usize, AstDepError> {
        if matches!(self.peek_text(), "!" | "-") {
            let op = self.bump();
            let operand = self.parse_unary()?;
            return Ok(self.tree.add_internal("unary expr", vec![op, operand]));
        }
        self.parse_postfix()
    }

    fn parse_postfix(&mut self) -> Result<usize, AstDepError> {
        let mut node = self.parse_primary()?;
        loop {
            match self.peek_text() {
                "." => {
                    let dot = self.bump();
                    let field = self.expect_kind(LeafKind::Ident, "member name")?;
                    node = self.tree.add_internal("member expr", vec![node, dot, field]);
                }
                "(" => {
                    let mut children = vec![node, self.bump()];
                    if self.peek_text() != ")" {
                        children.push(self.parse_arg_list()?);
                    }
                    children.push(self.expect(")")?);
                    node = self.tree.add_internal("call expr", children);
                }
                _ => return Ok(node),
            }
        }
    }

    fn parse_arg_list(&mut self) -> Result<usize, AstDepError> {
        let mut children = vec![self.parse_expr()?];
        while self.peek_text() == "," {
            children.push(self.bump());
            children.push(self.parse_expr()?);
        }
        Ok(self.tree.add_internal("arg list", children))
    }

    fn parse_primary(&mut self) -> Result<usize, AstDepError> {
        match self.peek() {
            Some(t) if t.text == "(" => {
                let open = self.bump();
                let inner = self.parse_expr()?;
                let close = self.expect(")")?;
                Ok(self.tree.add_internal("paren expr", vec![open, inner, close]))
            }
            Some(t) if matches!(t.kind, LeafKind::Ident | LeafKind::Number | LeafKind::Literal) => {
                Ok(self.bump())
            }
            _ => Err(self.fail(format!("expected expression, found {:?}", self.peek_text()))),
        }
    }
}
