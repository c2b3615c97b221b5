#include "curl_lab/cli.hpp"

int main(int argc, char** argv) { return curl::run_cli(argc, argv); }
