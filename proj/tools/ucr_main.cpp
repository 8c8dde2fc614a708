#include <cstdio>

int main() {
  std::puts("ucr: subcommands land here");
  return 2;
}
