//! Start the gateway on an ephemeral port and talk to it over TCP.

use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::thread;

use asrm::gateway::{Gateway, GatewayConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let gateway = Gateway::bind(GatewayConfig {
        bind: "127.0.0.1:0".into(),
        cold_start_ms: 50,
        ..GatewayConfig::default()
    })?;
    let addr = gateway.local_addr()?;
    let server = thread::spawn(move || gateway.run());

    let mut stream = TcpStream::connect(addr)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    for line in [
        r#"{"req":1,"op":"submit","function_id":"thumbnail","service_hint_ms":20}"#,
        r#"{"req":2,"op":"submit","function_id":"thumbnail","service_hint_ms":20}"#,
        r#"not json"#,
        r#"{"req":3,"op":"stats"}"#,
        r#"{"req":4,"op":"shutdown"}"#,
    ] {
        stream.write_all(format!("{line}\n").as_bytes())?;
        let mut reply = String::new();
        reader.read_line(&mut reply)?;
        println!("> {line}\n< {}", reply.trim_end());
    }
    server.join().map_err(|_| "gateway thread panicked")??;
    Ok(())
}
