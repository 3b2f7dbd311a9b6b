#include "icemamba/app.hpp"

int main(int argc, char** argv) { return icemamba::run(argc, argv); }
