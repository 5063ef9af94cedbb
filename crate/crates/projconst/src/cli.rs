//! Command-line interface (placeholder while the surface is built out).

pub fn run_main() -> i32 {
    eprintln!("not yet implemented");
    2
}
