// Regenerates data/fixture_otis.csv from the built-in deterministic fixture.
#include <cstdio>
#include <fstream>
#include <iostream>

#include "terata/cohort.hpp"
#include "terata/fixture.hpp"

int main(int argc, char** argv) {
    if (argc != 2) {
        std::cerr << "usage: make_fixture <output.csv>\n";
        return 64;
    }
    std::string csv = terata::serialize_cohort(terata::otis_fixture());
    std::ofstream out(argv[1], std::ios::binary);
    if (!out) {
        std::cerr << "cannot open " << argv[1] << " for writing\n";
        return 1;
    }
    out << csv;
    out.close();
    std::cout << "wrote " << argv[1] << " (" << csv.size() << " bytes)\n";
    return 0;
}
