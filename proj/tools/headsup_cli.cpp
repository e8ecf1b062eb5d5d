#include <cstdio>

int main() {
    std::puts("headsup: subcommands not wired yet");
    return 1;
}
