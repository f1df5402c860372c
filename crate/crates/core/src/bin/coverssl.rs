fn main() {
    coverssl::cli::main()
}
