#include "fvqa/cli.hpp"

int main(int argc, char** argv) {
    return fvqa::cli::run(argc, argv);
}
