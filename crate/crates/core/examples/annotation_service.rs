//! Serve the annotation API over a freshly generated synthetic data
//! directory.
//!
//! cargo run --release --example annotation_service -- [data-dir] [addr]
//!
//! Then, for example:
//!   curl localhost:8080/problems
//!   curl 'localhost:8080/problems/PROB000/candidates?kind=LAB&top_n=5'
//!   curl -XPOST localhost:8080/annotations -H 'x-annotator-id: me' -H 'content-type: application/json' \
//!        -d '{"problem":"PROB000","relation":"LAB","target":{"system":"LOINC","id":"20000"},"label":1}'
//!   curl -XPOST localhost:8080/retrain; curl localhost:8080/status

use std::net::SocketAddr;
use std::path::PathBuf;

use pomr::service::{serve, ServiceConfig};
use pomr::synth::{generate, write_dir, PlantSpec};

#[tokio::main]
async fn main() -> pomr::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "annotation-demo".into()));
    let addr: SocketAddr = args
        .next()
        .unwrap_or_else(|| "127.0.0.1:8080".into())
        .parse()
        .expect("socket address");
    if !dir.join("kb.json").exists() {
        write_dir(
            &generate(&PlantSpec {
                n_problems: 6,
                ..PlantSpec::default()
            })?,
            &dir,
        )?;
        println!("generated synthetic data in {}", dir.display());
    }
    println!("listening on http://{addr}");
    serve(ServiceConfig::new(&dir), addr).await
}
