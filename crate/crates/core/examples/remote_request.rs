//! Show the chat-completions request a remote backend would send, without
//! sending it.

use confcraft::backend::{AgentQuery, Message, RemoteBackend, RemoteConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = RemoteConfig::new("http://localhost:8000/v1", "some-model");
    let backend = RemoteBackend::with_key("local", cfg, None)?;
    let mut q = AgentQuery::new(vec![
        Message::system("You are an agent in a crafting world."),
        Message::user("Task: Mine a log\nConfidence: ?"),
    ]);
    q.seed = Some(3);
    q.image_attachment = Some(vec![0x89, b'P', b'N', b'G']);
    println!("POST {}", backend.endpoint());
    println!("{}", serde_json::to_string_pretty(&backend.request_body(&q))?);
    Ok(())
}
