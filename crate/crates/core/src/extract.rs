//! Structural model of a Jest test file.
//!
//! A file is split into sibling statements whose spans tile the source with
//! no gaps: each statement's span starts where the previous sibling ended, so
//! leading comments and whitespace belong to the statement that follows them.
//! Describe blocks with a block-bodied callback are split again into a head
//! (`describe('x', () => {`), their children, and a tail (`});`). Joining the
//! pieces back together reproduces the original bytes.
//!
//! A statement is a test construct when it is a call whose callee is the
//! identifier `describe`, `it`, or `test`, optionally behind one of the
//! member modifiers `.only`, `.skip`, `.todo`, or `.each` (both the
//! `x.each(table)(...)` and the tagged-template form). Anything else,
//! including tests created inside loops or helper functions, is an anchored
//! statement. Aliased test functions are not recognized.

use std::fmt;
use std::path::{Path, PathBuf};

use oxc_allocator::Allocator;
use oxc_ast::ast::{Argument, ArrowFunctionBody, Expression, FunctionBody, Statement};
use oxc_parser::Parser;
use oxc_span::{GetSpan, SourceType};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Half-open byte range into the original file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SourceSpan {
    pub start: usize,
    pub end: usize,
}

impl SourceSpan {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end);
        SourceSpan { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum NodeKind {
    Describe,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestName {
    Literal(String),
    Dynamic,
}

impl TestName {
    pub fn literal(&self) -> Option<&str> {
        match self {
            TestName::Literal(s) => Some(s),
            TestName::Dynamic => None,
        }
    }
}

impl fmt::Display for TestName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TestName::Literal(s) => f.write_str(s),
            TestName::Dynamic => f.write_str("<dynamic>"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modifier {
    None,
    Only,
    Skip,
    Each,
    Todo,
}

impl Modifier {
    fn from_member(name: &str) -> Option<Self> {
        match name {
            "only" => Some(Modifier::Only),
            "skip" => Some(Modifier::Skip),
            "each" => Some(Modifier::Each),
            "todo" => Some(Modifier::Todo),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum HookKind {
    BeforeEach,
    BeforeAll,
    AfterEach,
    AfterAll,
}

impl HookKind {
    fn from_ident(name: &str) -> Option<Self> {
        match name {
            "beforeEach" => Some(HookKind::BeforeEach),
            "beforeAll" => Some(HookKind::BeforeAll),
            "afterEach" => Some(HookKind::AfterEach),
            "afterAll" => Some(HookKind::AfterAll),
            _ => None,
        }
    }
}

/// A statement that never moves.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchoredStatement {
    pub span: SourceSpan,
    /// Where the statement proper begins, after its leading trivia.
    pub stmt_start: usize,
    /// Slot among its siblings.
    pub position_index: usize,
    pub hook: Option<HookKind>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestNode {
    pub kind: NodeKind,
    pub name: TestName,
    pub modifier: Modifier,
    pub span: SourceSpan,
    pub stmt_start: usize,
    pub position_index: usize,
    /// Offset just past the `{` of a describe callback's body. Children tile
    /// the source from here. `None` for tests and for describes whose
    /// callback is not an inline block-bodied function.
    pub body_start: Option<usize>,
    pub children: Vec<Item>,
    /// Names of the enclosing describe blocks, outermost first.
    pub container_path: Vec<TestName>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Item {
    Node(TestNode),
    Anchored(AnchoredStatement),
}

impl Item {
    pub fn span(&self) -> SourceSpan {
        match self {
            Item::Node(n) => n.span,
            Item::Anchored(a) => a.span,
        }
    }

    pub fn stmt_start(&self) -> usize {
        match self {
            Item::Node(n) => n.stmt_start,
            Item::Anchored(a) => a.stmt_start,
        }
    }

    pub fn position_index(&self) -> usize {
        match self {
            Item::Node(n) => n.position_index,
            Item::Anchored(a) => a.position_index,
        }
    }

    pub fn as_node(&self) -> Option<&TestNode> {
        match self {
            Item::Node(n) => Some(n),
            Item::Anchored(_) => None,
        }
    }
}

/// A scope whose direct children can be reordered: the file's top level or
/// the body of one describe block.
#[derive(Debug, Clone)]
pub struct Container<'m> {
    /// Position indices of the enclosing describes, outermost first; empty
    /// for the top level.
    pub path: Vec<usize>,
    pub describe_names: Vec<TestName>,
    pub items: &'m [Item],
}

impl Container<'_> {
    /// Slot indices of the direct children of the given kind.
    pub fn units(&self, kind: NodeKind) -> Vec<usize> {
        self.items
            .iter()
            .enumerate()
            .filter(|(_, item)| matches!(item, Item::Node(n) if n.kind == kind))
            .map(|(i, _)| i)
            .collect()
    }
}

/// Chooses a new slot order for a container's items, or `None` to keep it.
pub(crate) type Arrange<'a> = dyn Fn(&[usize], &[Item]) -> Option<Vec<usize>> + 'a;

/// Parsed test file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestSuiteModel {
    pub file_path: PathBuf,
    source: Vec<u8>,
    items: Vec<Item>,
    /// Index into `items` of the first test construct (or `items.len()`).
    body_index: usize,
    /// Trivia after the last top-level statement.
    pub trailing: Option<SourceSpan>,
    pub hooks: Vec<AnchoredStatement>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Error)]
pub enum ExtractionError {
    #[error("{path}: not valid UTF-8")]
    Encoding { path: PathBuf },
    #[error("{path}:{line}:{column}: syntax error: {message}")]
    Syntax {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Reads and parses a test file.
pub fn parse_file(path: &Path) -> Result<TestSuiteModel, ExtractionError> {
    let bytes = std::fs::read(path).map_err(|source| ExtractionError::Io {
        path: path.to_owned(),
        source,
    })?;
    parse_suite(path, &bytes)
}

/// Parses one test file's source into its structural model.
pub fn parse_suite(file_path: &Path, source: &[u8]) -> Result<TestSuiteModel, ExtractionError> {
    let text = std::str::from_utf8(source).map_err(|_| ExtractionError::Encoding {
        path: file_path.to_owned(),
    })?;

    let primary = SourceType::from_path(file_path).unwrap_or_else(|_| SourceType::mjs().with_jsx(true));
    let mut candidates = vec![primary];
    if !primary.is_typescript() {
        // CommonJS test files may use sloppy-mode syntax a module rejects.
        candidates.push(SourceType::cjs().with_jsx(true));
    }

    let mut first_error = None;
    for source_type in candidates {
        let allocator = Allocator::default();
        let ret = Parser::new(&allocator, text, source_type).parse();
        if ret.diagnostics.has_errors() || ret.fatal_error {
            if first_error.is_none() {
                let diag = ret.diagnostics.errors().next();
                let offset = diag
                    .and_then(|d| d.labels.first().map(|l| l.offset()))
                    .unwrap_or(0);
                let message = diag
                    .map(|d| d.message.to_string())
                    .unwrap_or_else(|| "unrecoverable parse failure".into());
                let (line, column) = line_col(text, offset as usize);
                first_error = Some(ExtractionError::Syntax {
                    path: file_path.to_owned(),
                    line,
                    column,
                    message,
                });
            }
            continue;
        }

        let program = ret.program;
        let mut statements: Vec<Stmt<'_, '_>> = program
            .directives
            .iter()
            .map(|d| Stmt::Directive(d.span.start as usize, d.span.end as usize))
            .chain(program.body.iter().map(Stmt::Statement))
            .collect();
        statements.sort_by_key(Stmt::end);

        let builder = Builder { source: text };
        let (items, last_end) = builder.build_list(&statements, 0, &[]);
        let body_index = items
            .iter()
            .position(|i| matches!(i, Item::Node(_)))
            .unwrap_or(items.len());
        let trailing = (last_end < text.len()).then(|| SourceSpan::new(last_end, text.len()));

        let mut model = TestSuiteModel {
            file_path: file_path.to_owned(),
            source: source.to_vec(),
            items,
            body_index,
            trailing,
            hooks: Vec::new(),
            warnings: Vec::new(),
        };
        model.hooks = collect_hooks(&model.items);
        if model.count(NodeKind::Test) == 0 && model.count(NodeKind::Describe) == 0 {
            model
                .warnings
                .push(format!("{}: no describe/it/test blocks found", file_path.display()));
        }
        return Ok(model);
    }
    Err(first_error.expect("at least one parse attempt"))
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let offset = offset.min(text.len());
    let before = &text.as_bytes()[..offset];
    let line = before.iter().filter(|b| **b == b'\n').count() + 1;
    let column = offset - before.iter().rposition(|b| *b == b'\n').map_or(0, |p| p + 1) + 1;
    (line, column)
}

fn collect_hooks(items: &[Item]) -> Vec<AnchoredStatement> {
    let mut out = Vec::new();
    for item in items {
        match item {
            Item::Anchored(a) if a.hook.is_some() => out.push(a.clone()),
            Item::Anchored(_) => {}
            Item::Node(n) => out.extend(collect_hooks(&n.children)),
        }
    }
    out
}

enum Stmt<'s, 'a> {
    /// Directive prologue entry, carried by its span.
    Directive(usize, usize),
    Statement(&'s Statement<'a>),
}

impl Stmt<'_, '_> {
    fn start(&self) -> usize {
        match self {
            Stmt::Directive(start, _) => *start,
            Stmt::Statement(s) => s.span().start as usize,
        }
    }

    fn end(&self) -> usize {
        match self {
            Stmt::Directive(_, end) => *end,
            Stmt::Statement(s) => s.span().end as usize,
        }
    }
}

struct Recognized<'s, 'a> {
    kind: Recognition,
    modifier: Modifier,
    arguments: &'s [Argument<'a>],
}

enum Recognition {
    Node(NodeKind),
    Hook(HookKind),
}

struct Builder<'t> {
    source: &'t str,
}

impl Builder<'_> {
    fn build_list(
        &self,
        statements: &[Stmt<'_, '_>],
        region_start: usize,
        ancestors: &[TestName],
    ) -> (Vec<Item>, usize) {
        let mut items = Vec::with_capacity(statements.len());
        let mut cursor = region_start;
        for (position_index, stmt) in statements.iter().enumerate() {
            let end = stmt.end();
            let span = SourceSpan::new(cursor, end);
            let stmt_start = stmt.start();
            cursor = end;
            let item = match stmt {
                Stmt::Directive(..) => Item::Anchored(AnchoredStatement {
                    span,
                    stmt_start,
                    position_index,
                    hook: None,
                }),
                Stmt::Statement(s) => {
                    self.build_item(s, span, stmt_start, position_index, ancestors)
                }
            };
            items.push(item);
        }
        (items, cursor)
    }

    fn build_item(
        &self,
        stmt: &Statement<'_>,
        span: SourceSpan,
        stmt_start: usize,
        position_index: usize,
        ancestors: &[TestName],
    ) -> Item {
        let anchored = |hook| {
            Item::Anchored(AnchoredStatement {
                span,
                stmt_start,
                position_index,
                hook,
            })
        };
        let Statement::ExpressionStatement(es) = stmt else {
            return anchored(None);
        };
        let Expression::CallExpression(call) = &es.expression else {
            return anchored(None);
        };
        let Some(rec) = recognize(&call.callee, &call.arguments) else {
            return anchored(None);
        };
        let kind = match rec.kind {
            Recognition::Hook(h) => return anchored(Some(h)),
            Recognition::Node(k) => k,
        };

        let name = rec
            .arguments
            .first()
            .and_then(Argument::as_expression)
            .map(title_of)
            .unwrap_or(TestName::Dynamic);

        let mut node = TestNode {
            kind,
            name: name.clone(),
            modifier: rec.modifier,
            span,
            stmt_start,
            position_index,
            body_start: None,
            children: Vec::new(),
            container_path: ancestors.to_vec(),
        };

        if kind == NodeKind::Describe {
            if let Some(body) = rec
                .arguments
                .get(1)
                .and_then(Argument::as_expression)
                .and_then(callback_body)
            {
                let (open, close) = (body.span.start as usize, body.span.end as usize);
                let bytes = self.source.as_bytes();
                if bytes.get(open) == Some(&b'{') && close > open && bytes[close - 1] == b'}' {
                    let mut statements: Vec<Stmt<'_, '_>> = body
                        .directives
                        .iter()
                        .map(|d| Stmt::Directive(d.span.start as usize, d.span.end as usize))
                        .chain(body.statements.iter().map(Stmt::Statement))
                        .collect();
                    statements.sort_by_key(Stmt::end);
                    let mut path = ancestors.to_vec();
                    path.push(name);
                    let (children, _) = self.build_list(&statements, open + 1, &path);
                    node.body_start = Some(open + 1);
                    node.children = children;
                }
            }
        }
        Item::Node(node)
    }
}

fn node_kind(ident: &str) -> Option<NodeKind> {
    match ident {
        "describe" => Some(NodeKind::Describe),
        "it" | "test" => Some(NodeKind::Test),
        _ => None,
    }
}

/// Matches `base.member` where `base` is describe/it/test.
fn member_modifier(expr: &Expression<'_>) -> Option<(NodeKind, Modifier)> {
    let Expression::StaticMemberExpression(m) = expr else {
        return None;
    };
    let Expression::Identifier(base) = &m.object else {
        return None;
    };
    Some((node_kind(&base.name)?, Modifier::from_member(&m.property.name)?))
}

fn recognize<'s, 'a>(
    callee: &'s Expression<'a>,
    arguments: &'s [Argument<'a>],
) -> Option<Recognized<'s, 'a>> {
    match callee {
        Expression::Identifier(id) => {
            if let Some(kind) = node_kind(&id.name) {
                return Some(Recognized {
                    kind: Recognition::Node(kind),
                    modifier: Modifier::None,
                    arguments,
                });
            }
            HookKind::from_ident(&id.name).map(|h| Recognized {
                kind: Recognition::Hook(h),
                modifier: Modifier::None,
                arguments,
            })
        }
        Expression::StaticMemberExpression(_) => {
            let (kind, modifier) = member_modifier(callee)?;
            // `test.each` must be applied to a table before it takes a title.
            (modifier != Modifier::Each).then_some(Recognized {
                kind: Recognition::Node(kind),
                modifier,
                arguments,
            })
        }
        // test.each(table)('title', fn)
        Expression::CallExpression(inner) => match member_modifier(&inner.callee)? {
            (kind, Modifier::Each) => Some(Recognized {
                kind: Recognition::Node(kind),
                modifier: Modifier::Each,
                arguments,
            }),
            _ => None,
        },
        // test.each`table`('title', fn)
        Expression::TaggedTemplateExpression(tagged) => match member_modifier(&tagged.tag)? {
            (kind, Modifier::Each) => Some(Recognized {
                kind: Recognition::Node(kind),
                modifier: Modifier::Each,
                arguments,
            }),
            _ => None,
        },
        _ => None,
    }
}

fn title_of(expr: &Expression<'_>) -> TestName {
    match expr {
        Expression::StringLiteral(s) => TestName::Literal(s.value.to_string()),
        Expression::TemplateLiteral(t) if t.expressions.is_empty() && t.quasis.len() == 1 => t
            .quasis[0]
            .value
            .cooked
            .as_ref()
            .map(|c| TestName::Literal(c.to_string()))
            .unwrap_or(TestName::Dynamic),
        _ => TestName::Dynamic,
    }
}

fn callback_body<'s, 'a>(expr: &'s Expression<'a>) -> Option<&'s FunctionBody<'a>> {
    match expr {
        Expression::ArrowFunctionExpression(arrow) => match &arrow.body {
            ArrowFunctionBody::FunctionBody(body) => Some(body),
            _ => None,
        },
        Expression::FunctionExpression(f) => f.body.as_deref(),
        Expression::ParenthesizedExpression(p) => callback_body(&p.expression),
        _ => None,
    }
}

impl TestSuiteModel {
    pub fn source(&self) -> &[u8] {
        &self.source
    }

    /// All top-level siblings, prologue first.
    pub fn items(&self) -> &[Item] {
        &self.items
    }

    /// Statements before the first test construct.
    pub fn prologue(&self) -> impl Iterator<Item = &AnchoredStatement> {
        self.items[..self.body_index].iter().filter_map(|i| match i {
            Item::Anchored(a) => Some(a),
            Item::Node(_) => None,
        })
    }

    /// Top-level siblings from the first test construct onwards.
    pub fn body(&self) -> &[Item] {
        &self.items[self.body_index..]
    }

    /// Every reorderable scope in depth-first pre-order, top level first.
    pub fn containers(&self) -> Vec<Container<'_>> {
        let mut out = vec![Container {
            path: Vec::new(),
            describe_names: Vec::new(),
            items: &self.items,
        }];
        fn walk<'m>(items: &'m [Item], path: &[usize], names: &[TestName], out: &mut Vec<Container<'m>>) {
            for item in items {
                if let Item::Node(n) = item {
                    if n.body_start.is_some() {
                        let mut p = path.to_vec();
                        p.push(n.position_index);
                        let mut nm = names.to_vec();
                        nm.push(n.name.clone());
                        out.push(Container {
                            path: p.clone(),
                            describe_names: nm.clone(),
                            items: &n.children,
                        });
                        walk(&n.children, &p, &nm, out);
                    }
                }
            }
        }
        walk(&self.items, &[], &[], &mut out);
        out
    }

    /// All test nodes in source order, at any depth.
    pub fn nodes(&self) -> Vec<&TestNode> {
        fn walk<'m>(items: &'m [Item], out: &mut Vec<&'m TestNode>) {
            for item in items {
                if let Item::Node(n) = item {
                    out.push(n);
                    walk(&n.children, out);
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.items, &mut out);
        out
    }

    pub fn count(&self, kind: NodeKind) -> usize {
        self.nodes().iter().filter(|n| n.kind == kind).count()
    }

    /// Rebuilds the source from the model's spans.
    pub fn reconstruct(&self) -> Vec<u8> {
        self.render(&|_, _| None)
    }

    /// Renders the file, letting `arrange` choose, per container, which
    /// original slot fills each slot. `arrange` receives the container path
    /// and its items and returns `None` to keep the original order.
    pub(crate) fn render(&self, arrange: &Arrange) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.source.len());
        self.render_items(&self.items, &[], arrange, &mut out);
        if let Some(t) = self.trailing {
            out.extend_from_slice(&self.source[t.start..t.end]);
        }
        out
    }

    fn render_items(
        &self,
        items: &[Item],
        path: &[usize],
        arrange: &Arrange,
        out: &mut Vec<u8>,
    ) {
        let order = arrange(path, items);
        let mut unterminated_move = false;
        for slot in 0..items.len() {
            let original = order.as_ref().map_or(slot, |o| o[slot]);
            let item = &items[original];
            let moved = original != slot;
            if unterminated_move && self.starts_with_asi_hazard(item) {
                out.push(b';');
            }
            if moved && slot > 0 && !self.leading_has_line_break(item) {
                out.push(b'\n');
            }
            self.render_item(item, path, arrange, out);
            unterminated_move = moved && !self.is_terminated(item);
        }
    }

    fn leading_has_line_break(&self, item: &Item) -> bool {
        self.source[item.span().start..item.stmt_start()]
            .iter()
            .any(|b| matches!(b, b'\n' | b'\r'))
    }

    fn is_terminated(&self, item: &Item) -> bool {
        let span = item.span();
        matches!(self.source[span.start..span.end].last(), Some(b';' | b'}'))
    }

    /// Statements that would continue an unterminated predecessor.
    fn starts_with_asi_hazard(&self, item: &Item) -> bool {
        matches!(
            self.source.get(item.stmt_start()),
            Some(b'(' | b'[' | b'`' | b'+' | b'-' | b'/')
        )
    }

    fn render_item(
        &self,
        item: &Item,
        path: &[usize],
        arrange: &Arrange,
        out: &mut Vec<u8>,
    ) {
        match item {
            Item::Node(TestNode {
                body_start: Some(body_start),
                children,
                span,
                position_index,
                ..
            }) => {
                out.extend_from_slice(&self.source[span.start..*body_start]);
                let mut child_path = path.to_vec();
                child_path.push(*position_index);
                self.render_items(children, &child_path, arrange, out);
                let tail_start = children.last().map_or(*body_start, |c| c.span().end);
                out.extend_from_slice(&self.source[tail_start..span.end]);
            }
            other => {
                let span = other.span();
                out.extend_from_slice(&self.source[span.start..span.end]);
            }
        }
    }
}

#[cfg(test)]
pub(crate) mod tests_support {
    pub const MOCK_POLLUTION: &str = "const logger = { log: jest.fn() };

test('calls logger once', () => {
  logger.log(`Test Log`);
  expect(logger.log).toHaveBeenCalledTimes(1);
});

test('logger has not been called yet', () => {
  expect(logger.log).not.toHaveBeenCalled();
});
";
}
