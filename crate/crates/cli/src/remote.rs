//! `serve` and `ctl`.

use std::io::{BufRead, Write};
use std::time::Duration;

use serde_json::{json, Value};

use sda_client::protocol::default_addr;
use sda_client::{Client, ClientError};
use sda_control::{spawn, ServerConfig, ServerError};

use crate::output::Output;
use crate::{CliError, CliResult, CtlArgs, ServeArgs};

fn runtime() -> CliResult<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(|e| CliError::Io(format!("runtime: {e}")))
}

pub fn serve(out: &Output, a: &ServeArgs) -> CliResult {
    if !(a.timeout_s.is_finite() && a.timeout_s > 0.0) {
        return Err(CliError::Usage(format!("timeout-s must be > 0, got {}", a.timeout_s)));
    }
    tracing_subscriber::fmt().with_writer(std::io::stderr).with_target(false).init();
    let cfg = ServerConfig {
        bind: a.bind.clone().unwrap_or_else(default_addr),
        scenario: a.scenario.clone(),
        seed: a.seed,
        output_dir: out.dir.clone(),
        command_timeout: Duration::from_secs_f64(a.timeout_s),
    };
    runtime()?.block_on(async {
        let handle = spawn(cfg).await.map_err(|e| match e {
            ServerError::Scenario(_) | ServerError::Setup(_) => CliError::usage(e),
            _ => CliError::Io(e.to_string()),
        })?;
        {
            let mut stdout = std::io::stdout().lock();
            let _ = writeln!(stdout, "listening on {}", handle.local_addr());
            let _ = stdout.flush();
        }
        tokio::signal::ctrl_c().await.map_err(|e| CliError::Io(format!("signal: {e}")))?;
        handle.shutdown().await;
        Ok(())
    })
}

fn remote_error(e: ClientError) -> CliError {
    match &e {
        ClientError::Remote { code, .. } => match code.as_str() {
            "bad_request" | "out_of_range" | "unknown_node" | "unknown_command" => CliError::Usage(e.to_string()),
            "io" => CliError::Io(e.to_string()),
            _ => CliError::Simulation(e.to_string()),
        },
        _ => CliError::Io(e.to_string()),
    }
}

fn parse_args(text: Option<&str>) -> CliResult<Value> {
    match text {
        None => Ok(json!({})),
        Some(t) => match serde_json::from_str::<Value>(t) {
            Ok(v @ Value::Object(_)) => Ok(v),
            Ok(_) => Err(CliError::Usage("command arguments must be a JSON object".into())),
            Err(e) => Err(CliError::Usage(format!("command arguments: {e}"))),
        },
    }
}

/// Script lines: `{"cmd": "...", "args": {...}}`; blank lines and `#` comments are skipped.
fn read_script(spec: &str) -> CliResult<Vec<(String, Value)>> {
    let text = if spec == "-" {
        let mut s = String::new();
        for line in std::io::stdin().lock().lines() {
            s.push_str(&line.map_err(|e| CliError::Io(format!("stdin: {e}")))?);
            s.push('\n');
        }
        s
    } else {
        std::fs::read_to_string(spec).map_err(|e| CliError::Io(format!("{spec}: {e}")))?
    };
    let mut steps = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: Value = serde_json::from_str(line).map_err(|e| CliError::Usage(format!("{spec}:{}: {e}", n + 1)))?;
        let cmd = v.get("cmd").and_then(Value::as_str).ok_or_else(|| CliError::Usage(format!("{spec}:{}: missing cmd", n + 1)))?;
        let args = v.get("args").cloned().unwrap_or_else(|| json!({}));
        if !args.is_object() {
            return Err(CliError::Usage(format!("{spec}:{}: args must be an object", n + 1)));
        }
        steps.push((cmd.to_string(), args));
    }
    Ok(steps)
}

pub fn ctl(_out: &Output, a: &CtlArgs) -> CliResult {
    let steps = match (&a.script, &a.cmd) {
        (Some(s), _) => read_script(s)?,
        (None, Some(cmd)) => vec![(cmd.clone(), parse_args(a.args.as_deref())?)],
        (None, None) => return Err(CliError::Usage("give a command or --script".into())),
    };
    let addr = a.addr.clone().unwrap_or_else(default_addr);
    runtime()?.block_on(async {
        let client = Client::connect(addr.as_str()).await.map_err(|e| CliError::Io(format!("{addr}: {e}")))?;
        for (cmd, args) in steps {
            let result = client
                .call_with_progress(&cmd, args, |p| eprintln!("{} {}", p.event, p.data))
                .await
                .map_err(remote_error)?;
            println!("{result}");
        }
        Ok(())
    })
}
