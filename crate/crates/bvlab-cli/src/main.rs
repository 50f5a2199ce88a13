fn main() { println!("bvlab"); }
