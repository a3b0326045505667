fn main() {
    println!("sfl");
}
