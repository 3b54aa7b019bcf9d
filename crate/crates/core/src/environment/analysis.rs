//! Binary analysis providers behind the executor's `disassemble` and
//! `decompile` tools.

use super::Sandbox;

pub trait Analyzer: Send + Sync {
    fn disassemble(&self, sandbox: &Sandbox, path: &str, function: Option<&str>) -> Result<String, String>;
    fn decompile(&self, sandbox: &Sandbox, path: &str, function: Option<&str>) -> Result<String, String>;
}

fn quote(arg: &str) -> String {
    format!("'{}'", arg.replace('\'', "'\\''"))
}

/// Runs shell command templates inside the sandbox. `{path}` and `{function}`
/// are replaced with shell-quoted arguments.
#[derive(Debug, Clone)]
pub struct CommandAnalyzer {
    pub disassemble: String,
    pub disassemble_function: String,
    pub decompile: Option<String>,
}

impl Default for CommandAnalyzer {
    fn default() -> Self {
        Self {
            disassemble: "objdump -d --no-show-raw-insn {path}".into(),
            disassemble_function: "objdump -d --no-show-raw-insn --disassemble={function} {path}".into(),
            decompile: None,
        }
    }
}

impl CommandAnalyzer {
    fn run(&self, sandbox: &Sandbox, template: &str, path: &str, function: Option<&str>) -> Result<String, String> {
        let cmd = template
            .replace("{path}", &quote(path))
            .replace("{function}", &quote(function.unwrap_or("main")));
        let r = sandbox.exec(&cmd).map_err(|e| e.to_string())?;
        if r.success() {
            Ok(r.stdout)
        } else {
            Err(r.render())
        }
    }
}

impl Analyzer for CommandAnalyzer {
    fn disassemble(&self, sandbox: &Sandbox, path: &str, function: Option<&str>) -> Result<String, String> {
        let template = if function.is_some() {
            &self.disassemble_function
        } else {
            &self.disassemble
        };
        self.run(sandbox, template, path, function)
    }

    fn decompile(&self, sandbox: &Sandbox, path: &str, function: Option<&str>) -> Result<String, String> {
        match &self.decompile {
            Some(t) => self.run(sandbox, t, path, function),
            None => Err("no decompiler is configured for this sandbox".into()),
        }
    }
}

/// Fixed outputs, for tests.
#[derive(Debug, Clone, Default)]
pub struct StubAnalyzer {
    pub disassembly: String,
    pub decompilation: String,
}

impl Analyzer for StubAnalyzer {
    fn disassemble(&self, _sandbox: &Sandbox, path: &str, function: Option<&str>) -> Result<String, String> {
        Ok(format!("; {path} {}\n{}", function.unwrap_or("*"), self.disassembly))
    }

    fn decompile(&self, _sandbox: &Sandbox, path: &str, function: Option<&str>) -> Result<String, String> {
        Ok(format!("// {path} {}\n{}", function.unwrap_or("*"), self.decompilation))
    }
}
