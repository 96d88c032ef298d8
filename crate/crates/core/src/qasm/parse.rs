use std::f64::consts::PI;

use super::{
    Circuit, Condition, Gate, Instruction, ParseDiagnostic, Severity, MAX_CLBITS, MAX_QUBITS,
};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(String),
    Str(String),
    Semi,
    LBracket,
    RBracket,
    LParen,
    RParen,
    Comma,
    Arrow,
    EqEq,
    Slash,
    Minus,
    Unknown(char),
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

fn lex(src: &str) -> Vec<Token> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0, 1, 1);
    while i < chars.len() {
        let c = chars[i];
        let (tl, tc) = (line, col);
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        let tok = if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            col += i - start;
            Tok::Ident(chars[start..i].iter().collect())
        } else if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let start = i;
            while i < chars.len() {
                let d = chars[i];
                let exp_sign = (d == '+' || d == '-')
                    && i > start
                    && matches!(chars[i - 1], 'e' | 'E');
                if d.is_ascii_digit() || d == '.' || d == 'e' || d == 'E' || exp_sign {
                    i += 1;
                } else {
                    break;
                }
            }
            col += i - start;
            Tok::Number(chars[start..i].iter().collect())
        } else if c == '"' {
            let start = i + 1;
            i += 1;
            while i < chars.len() && chars[i] != '"' && chars[i] != '\n' {
                i += 1;
            }
            let s: String = chars[start..i].iter().collect();
            if i < chars.len() && chars[i] == '"' {
                i += 1;
            }
            col += i - start + 1;
            Tok::Str(s)
        } else {
            let two = chars.get(i + 1).copied();
            let (t, n) = match (c, two) {
                ('-', Some('>')) => (Tok::Arrow, 2),
                ('=', Some('=')) => (Tok::EqEq, 2),
                (';', _) => (Tok::Semi, 1),
                ('[', _) => (Tok::LBracket, 1),
                (']', _) => (Tok::RBracket, 1),
                ('(', _) => (Tok::LParen, 1),
                (')', _) => (Tok::RParen, 1),
                (',', _) => (Tok::Comma, 1),
                ('/', _) => (Tok::Slash, 1),
                ('-', _) => (Tok::Minus, 1),
                (other, _) => (Tok::Unknown(other), 1),
            };
            i += n;
            col += n;
            t
        };
        out.push(Token {
            tok,
            line: tl,
            col: tc,
        });
    }
    out.push(Token {
        tok: Tok::Eof,
        line,
        col,
    });
    out
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(s) => format!("'{s}'"),
        Tok::Number(s) => format!("number '{s}'"),
        Tok::Str(s) => format!("string \"{s}\""),
        Tok::Semi => "';'".into(),
        Tok::LBracket => "'['".into(),
        Tok::RBracket => "']'".into(),
        Tok::LParen => "'('".into(),
        Tok::RParen => "')'".into(),
        Tok::Comma => "','".into(),
        Tok::Arrow => "'->'".into(),
        Tok::EqEq => "'=='".into(),
        Tok::Slash => "'/'".into(),
        Tok::Minus => "'-'".into(),
        Tok::Unknown(c) => format!("'{c}'"),
        Tok::Eof => "end of input".into(),
    }
}

struct Register {
    name: String,
    size: usize,
}

/// Result of one statement; `Err` carries a diagnostic and triggers recovery.
type Step<T> = Result<T, ParseDiagnostic>;

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    diags: Vec<ParseDiagnostic>,
    qreg: Option<Register>,
    creg: Option<Register>,
    instructions: Vec<Instruction>,
}

const GATES: [&str; 8] = ["h", "x", "y", "z", "rx", "ry", "rz", "cx"];

impl Parser {
    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn prev(&self) -> &Token {
        &self.toks[self.pos.saturating_sub(1)]
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err_at(t: &Token, msg: impl Into<String>) -> ParseDiagnostic {
        ParseDiagnostic {
            line: t.line,
            column: t.col,
            message: msg.into(),
            severity: Severity::Error,
        }
    }

    fn expect(&mut self, want: Tok, what: &str) -> Step<Token> {
        if self.peek().tok == want {
            Ok(self.bump())
        } else {
            let t = self.peek().clone();
            Err(Self::err_at(
                &t,
                format!("expected {what}, found {}", describe(&t.tok)),
            ))
        }
    }

    /// The semicolon check points at the last token of the statement, which
    /// keeps the diagnostic on the offending line.
    fn expect_semi(&mut self) -> Step<()> {
        if self.peek().tok == Tok::Semi {
            self.bump();
            Ok(())
        } else {
            let t = self.prev().clone();
            Err(Self::err_at(&t, "missing semicolon"))
        }
    }

    fn expect_ident(&mut self, what: &str) -> Step<(String, Token)> {
        let t = self.peek().clone();
        match &t.tok {
            Tok::Ident(s) => {
                let s = s.clone();
                self.bump();
                Ok((s, t))
            }
            other => Err(Self::err_at(
                &t,
                format!("expected {what}, found {}", describe(other)),
            )),
        }
    }

    fn expect_uint(&mut self, what: &str) -> Step<(u64, Token)> {
        let t = self.peek().clone();
        match &t.tok {
            Tok::Number(s) => match s.parse::<u64>() {
                Ok(v) => {
                    self.bump();
                    Ok((v, t))
                }
                Err(_) => Err(Self::err_at(
                    &t,
                    format!("expected {what}, found number '{s}'"),
                )),
            },
            other => Err(Self::err_at(
                &t,
                format!("expected {what}, found {}", describe(other)),
            )),
        }
    }

    /// Skips to just past the next `;` (or to end of input).
    fn recover(&mut self) {
        loop {
            match self.peek().tok {
                Tok::Eof => return,
                Tok::Semi => {
                    self.bump();
                    return;
                }
                _ => {
                    self.bump();
                }
            }
        }
    }

    fn run(&mut self) {
        if let Err(d) = self.header() {
            self.diags.push(d);
            self.recover();
        }
        while self.peek().tok != Tok::Eof {
            let before = self.pos;
            if let Err(d) = self.statement() {
                self.diags.push(d);
                // A missing semicolon leaves the cursor on the next statement.
                if self.pos == before || !d_is_missing_semi(self.diags.last()) {
                    self.recover();
                }
            }
        }
    }

    fn header(&mut self) -> Step<()> {
        let t = self.peek().clone();
        match &t.tok {
            Tok::Ident(s) if s == "OPENQASM" => {
                self.bump();
            }
            other => {
                return Err(Self::err_at(
                    &t,
                    format!("expected 'OPENQASM 2.0;' header, found {}", describe(other)),
                ))
            }
        }
        let v = self.peek().clone();
        match &v.tok {
            Tok::Number(n) if n == "2.0" || n == "2" => {
                self.bump();
            }
            other => {
                return Err(Self::err_at(
                    &v,
                    format!("unsupported OpenQASM version {}", describe(other)),
                ))
            }
        }
        self.expect_semi()
    }

    fn statement(&mut self) -> Step<()> {
        let (word, t) = self.expect_ident("a statement")?;
        match word.as_str() {
            "include" => {
                let s = self.peek().clone();
                match &s.tok {
                    Tok::Str(name) => {
                        if name != "qelib1.inc" {
                            self.diags.push(ParseDiagnostic {
                                line: s.line,
                                column: s.col,
                                message: format!("include \"{name}\" ignored"),
                                severity: Severity::Warning,
                            });
                        }
                        self.bump();
                    }
                    other => {
                        return Err(Self::err_at(
                            &s,
                            format!("expected include file name, found {}", describe(other)),
                        ))
                    }
                }
                self.expect_semi()
            }
            "qreg" | "creg" => self.declaration(&word, &t),
            "measure" => {
                let inst = self.measure()?;
                self.expect_semi()?;
                self.instructions.push(inst);
                Ok(())
            }
            "barrier" => {
                let inst = self.barrier()?;
                self.expect_semi()?;
                self.instructions.push(inst);
                Ok(())
            }
            "if" => {
                let cond = self.condition()?;
                let (g, gt) = self.expect_ident("a gate after the condition")?;
                if !GATES.contains(&g.as_str()) {
                    return Err(Self::err_at(&gt, format!("unsupported gate name '{g}'")));
                }
                let mut inst = self.gate(&g)?;
                self.expect_semi()?;
                inst.condition = Some(cond);
                self.instructions.push(inst);
                Ok(())
            }
            g if GATES.contains(&g) => {
                let inst = self.gate(g)?;
                self.expect_semi()?;
                self.instructions.push(inst);
                Ok(())
            }
            other => Err(Self::err_at(&t, format!("unsupported gate name '{other}'"))),
        }
    }

    fn declaration(&mut self, kind: &str, kw: &Token) -> Step<()> {
        let (name, _) = self.expect_ident("a register name")?;
        self.expect(Tok::LBracket, "'['")?;
        let (size, st) = self.expect_uint("a register size")?;
        self.expect(Tok::RBracket, "']'")?;
        self.expect_semi()?;
        let size = size as usize;
        let reg = Register { name, size };
        if kind == "qreg" {
            if self.qreg.is_some() {
                return Err(Self::err_at(kw, "only one qreg is supported"));
            }
            if size == 0 || size > MAX_QUBITS {
                return Err(Self::err_at(
                    &st,
                    format!("qreg size must be between 1 and {MAX_QUBITS}"),
                ));
            }
            self.qreg = Some(reg);
        } else {
            if self.creg.is_some() {
                return Err(Self::err_at(kw, "only one creg is supported"));
            }
            if size > MAX_CLBITS {
                return Err(Self::err_at(
                    &st,
                    format!("creg size must be at most {MAX_CLBITS}"),
                ));
            }
            self.creg = Some(reg);
        }
        Ok(())
    }

    /// Parses `name[index]` against the given register kind.
    fn operand(&mut self, quantum: bool) -> Step<usize> {
        let (name, nt) = self.expect_ident(if quantum {
            "a qubit operand"
        } else {
            "a classical bit operand"
        })?;
        let reg = if quantum { &self.qreg } else { &self.creg };
        let size = match reg {
            Some(r) if r.name == name => r.size,
            _ => return Err(Self::err_at(&nt, format!("undeclared register '{name}'"))),
        };
        self.expect(Tok::LBracket, "'['")?;
        let (idx, it) = self.expect_uint("an index")?;
        self.expect(Tok::RBracket, "']'")?;
        if idx as usize >= size {
            return Err(Self::err_at(
                &it,
                format!("index out of range: {name}[{idx}] but size is {size}"),
            ));
        }
        Ok(idx as usize)
    }

    fn angle(&mut self) -> Step<f64> {
        let start = self.peek().clone();
        let malformed = |t: &Token| Self::err_at(t, "malformed angle");
        let negate = if self.peek().tok == Tok::Minus {
            self.bump();
            true
        } else {
            false
        };
        let t = self.bump();
        let value = match &t.tok {
            Tok::Number(s) => s.parse::<f64>().map_err(|_| malformed(&t))?,
            Tok::Ident(s) if s == "pi" => {
                if self.peek().tok == Tok::Slash {
                    self.bump();
                    let k = self.bump();
                    match &k.tok {
                        Tok::Number(s) => match s.parse::<u64>() {
                            Ok(k) if k > 0 => PI / k as f64,
                            _ => return Err(malformed(&k)),
                        },
                        _ => return Err(malformed(&k)),
                    }
                } else {
                    PI
                }
            }
            _ => return Err(malformed(if negate { &t } else { &start })),
        };
        if !value.is_finite() {
            return Err(malformed(&t));
        }
        Ok(if negate { -value } else { value })
    }

    fn gate(&mut self, name: &str) -> Step<Instruction> {
        let angle = if matches!(name, "rx" | "ry" | "rz") {
            self.expect(Tok::LParen, "'(' before the angle")?;
            let a = self.angle()?;
            if self.peek().tok != Tok::RParen {
                let t = self.peek().clone();
                return Err(Self::err_at(&t, "malformed angle"));
            }
            self.bump();
            Some(a)
        } else {
            None
        };
        if name == "cx" {
            let at = self.peek().clone();
            let control = self.operand(true)?;
            self.expect(Tok::Comma, "','")?;
            let target = self.operand(true)?;
            if control == target {
                return Err(Self::err_at(&at, "cx control and target must differ"));
            }
            return Ok(Instruction::cx(control, target));
        }
        let qubit = self.operand(true)?;
        let gate = Gate::from_name(name, angle).expect("gate table and names agree");
        Ok(Instruction::gate(gate, qubit))
    }

    fn measure(&mut self) -> Step<Instruction> {
        let qubit = self.operand(true)?;
        self.expect(Tok::Arrow, "'->'")?;
        let clbit = self.operand(false)?;
        Ok(Instruction::measure(qubit, clbit))
    }

    fn barrier(&mut self) -> Step<Instruction> {
        let mut qubits = Vec::new();
        loop {
            let t = self.peek().clone();
            if let Tok::Ident(name) = &t.tok {
                if self.toks[self.pos + 1].tok != Tok::LBracket {
                    // whole-register form `barrier q;`
                    match self.qreg.as_ref().filter(|r| &r.name == name).map(|r| r.size) {
                        Some(size) => {
                            self.bump();
                            qubits.extend(0..size);
                        }
                        _ => {
                            return Err(Self::err_at(
                                &t,
                                format!("undeclared register '{name}'"),
                            ))
                        }
                    }
                } else {
                    qubits.push(self.operand(true)?);
                }
            } else {
                qubits.push(self.operand(true)?);
            }
            if self.peek().tok == Tok::Comma {
                self.bump();
            } else {
                break;
            }
        }
        qubits.sort_unstable();
        qubits.dedup();
        Ok(Instruction::barrier(qubits))
    }

    fn condition(&mut self) -> Step<Condition> {
        self.expect(Tok::LParen, "'('")?;
        let (name, nt) = self.expect_ident("a classical register")?;
        let size = match &self.creg {
            Some(r) if r.name == name => r.size,
            _ => return Err(Self::err_at(&nt, format!("undeclared register '{name}'"))),
        };
        self.expect(Tok::EqEq, "'=='")?;
        let (value, vt) = self.expect_uint("a register value")?;
        self.expect(Tok::RParen, "')'")?;
        if size < 64 && value >> size != 0 {
            return Err(Self::err_at(
                &vt,
                format!("condition value {value} does not fit in {size} bits"),
            ));
        }
        Ok(Condition { value })
    }
}

fn d_is_missing_semi(d: Option<&ParseDiagnostic>) -> bool {
    d.is_some_and(|d| d.message == "missing semicolon")
}

/// Parses source text into a circuit named `circuit`.
pub fn parse_qasm(text: &str) -> Result<Circuit, Vec<ParseDiagnostic>> {
    parse_qasm_named(text, "circuit")
}

/// Parses source text; on failure returns every diagnostic collected
/// (warnings included), ordered by position.
pub fn parse_qasm_named(text: &str, name: &str) -> Result<Circuit, Vec<ParseDiagnostic>> {
    let mut p = Parser {
        toks: lex(text),
        pos: 0,
        diags: Vec::new(),
        qreg: None,
        creg: None,
        instructions: Vec::new(),
    };
    p.run();
    if p.qreg.is_none() && !p.diags.iter().any(|d| d.severity == Severity::Error) {
        let t = p.toks.last().expect("lexer always emits Eof").clone();
        p.diags.push(Parser::err_at(&t, "missing qreg declaration"));
    }
    if p.diags.iter().any(|d| d.severity == Severity::Error) {
        p.diags.sort_by_key(|d| (d.line, d.column));
        return Err(p.diags);
    }
    let qreg = p.qreg.expect("checked above");
    Ok(Circuit {
        name: name.to_string(),
        num_qubits: qreg.size,
        num_clbits: p.creg.map_or(0, |r| r.size),
        instructions: p.instructions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qasm::Op;

    fn errors(src: &str) -> Vec<ParseDiagnostic> {
        parse_qasm(src).expect_err("should fail")
    }

    #[test]
    fn bell_with_measure() {
        let c = parse_qasm(
            "OPENQASM 2.0; qreg q[2]; creg c[2]; h q[0]; cx q[0],q[1]; measure q[0] -> c[0];",
        )
        .unwrap();
        assert_eq!((c.num_qubits, c.num_clbits, c.instructions.len()), (2, 2, 3));
        assert_eq!(c.instructions[1].op, Op::Cx { control: 0, target: 1 });
    }

    #[test]
    fn index_out_of_range_points_at_index() {
        let d = errors("OPENQASM 2.0;\nqreg q[1];\nx q[3];");
        assert_eq!(d.len(), 1);
        assert!(d[0].message.contains("index out of range"), "{}", d[0]);
        assert_eq!((d[0].line, d[0].column), (3, 5));
    }

    #[test]
    fn conditioned_gate() {
        let c = parse_qasm(
            "OPENQASM 2.0; qreg q[1]; creg c[1]; h q[0]; measure q[0]->c[0]; if(c==1) x q[0];",
        )
        .unwrap();
        let last = c.instructions.last().unwrap();
        assert_eq!(last.condition, Some(Condition { value: 1 }));
        assert_eq!(last.op, Op::Gate { gate: Gate::X, qubit: 0 });
    }

    #[test]
    fn angles() {
        let c = parse_qasm(
            "OPENQASM 2.0;\ninclude \"qelib1.inc\";\nqreg q[1];\nrx(pi) q[0];\nry(pi/4) q[0];\nrz(-0.25) q[0];\nrz(-pi/2) q[0];\nrx(1e-3) q[0];",
        )
        .unwrap();
        let angles: Vec<f64> = c
            .instructions
            .iter()
            .map(|i| match &i.op {
                Op::Gate { gate, .. } => gate.angle().unwrap(),
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(angles, vec![PI, PI / 4.0, -0.25, -PI / 2.0, 1e-3]);
    }

    #[test]
    fn malformed_angle() {
        for src in [
            "OPENQASM 2.0;\nqreg q[1];\nrx(abc) q[0];",
            "OPENQASM 2.0;\nqreg q[1];\nrx(pi/0) q[0];",
            "OPENQASM 2.0;\nqreg q[1];\nrx(1.2.3) q[0];",
            "OPENQASM 2.0;\nqreg q[1];\nrx(pi*2) q[0];",
            "OPENQASM 2.0;\nqreg q[1];\nrx() q[0];",
        ] {
            let d = errors(src);
            assert_eq!(d[0].message, "malformed angle", "{src}");
            assert_eq!(d[0].line, 3);
        }
    }

    #[test]
    fn missing_semicolon_reports_statement_line() {
        let d = errors("OPENQASM 2.0;\nqreg q[2];\nh q[0]\ncx q[0],q[1];");
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].message, "missing semicolon");
        assert_eq!(d[0].line, 3);
    }

    #[test]
    fn unsupported_gate() {
        let d = errors("OPENQASM 2.0;\nqreg q[1];\nu3(0,0,0) q[0];");
        assert_eq!(d[0].message, "unsupported gate name 'u3'");
        assert_eq!((d[0].line, d[0].column), (3, 1));
    }

    #[test]
    fn undeclared_registers() {
        let d = errors("OPENQASM 2.0;\nqreg q[1];\nh r[0];");
        assert_eq!(d[0].message, "undeclared register 'r'");
        let d = errors("OPENQASM 2.0;\nqreg q[1];\nmeasure q[0] -> c[0];");
        assert_eq!(d[0].message, "undeclared register 'c'");
        assert_eq!((d[0].line, d[0].column), (3, 17));
        let d = errors("OPENQASM 2.0;\nqreg q[1];\nif(c==1) x q[0];");
        assert_eq!(d[0].message, "undeclared register 'c'");
    }

    #[test]
    fn recovery_collects_several_errors() {
        let d = errors("OPENQASM 2.0;\nqreg q[1];\nx q[4];\nfoo q[0];\nh q[0];\nrx(zz) q[0];");
        let lines: Vec<usize> = d.iter().map(|d| d.line).collect();
        assert_eq!(lines, vec![3, 4, 6]);
    }

    #[test]
    fn header_is_required() {
        let d = errors("qreg q[1];");
        assert_eq!((d[0].line, d[0].column), (1, 1));
        let d = errors("OPENQASM 3.0;\nqreg q[1];");
        assert!(d[0].message.contains("unsupported OpenQASM version"));
    }

    #[test]
    fn comments_and_barriers() {
        let c = parse_qasm(
            "// bell\nOPENQASM 2.0; // header\nqreg q[3];\nbarrier q;\nbarrier q[2],q[0];\n",
        )
        .unwrap();
        assert_eq!(c.instructions[0].op, Op::Barrier { qubits: vec![0, 1, 2] });
        assert_eq!(c.instructions[1].op, Op::Barrier { qubits: vec![0, 2] });
    }

    #[test]
    fn register_limits() {
        assert!(errors("OPENQASM 2.0; qreg q[21];")[0]
            .message
            .contains("between 1 and 20"));
        assert!(errors("OPENQASM 2.0; qreg q[0];")[0]
            .message
            .contains("between 1 and 20"));
        assert!(errors("OPENQASM 2.0; qreg q[1]; qreg r[1];")[0]
            .message
            .contains("only one qreg"));
        assert!(errors("OPENQASM 2.0;")[0].message.contains("missing qreg"));
        assert!(errors("OPENQASM 2.0; qreg q[1]; creg c[1]; if(c==2) x q[0];")[0]
            .message
            .contains("does not fit"));
    }

    #[test]
    fn include_of_other_file_warns_only() {
        let c = parse_qasm("OPENQASM 2.0; include \"other.inc\"; qreg q[1];");
        assert!(c.is_ok());
    }

    #[test]
    fn cx_needs_distinct_qubits() {
        let d = errors("OPENQASM 2.0;\nqreg q[2];\ncx q[1],q[1];");
        assert_eq!(d[0].line, 3);
        assert!(d[0].message.contains("must differ"));
    }
}
