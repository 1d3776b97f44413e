// Reference double for the external-forecaster adapter protocol (v1).
// Reads one JSON request per line and answers with the last context value
// repeated across the horizon. Optional first argument selects a
// misbehaving mode used by the protocol tests:
//   echo    - well-formed responses (default)
//   short   - forecast array one entry too short
//   garbage - non-JSON response line
//   text    - forecast entries are strings
//   huge    - forecast entries overflow to infinity
//   wrongid - echoes a mangled series_id
//   slow    - sleeps 2 s before each response
//   silent  - reads requests but never answers

#include <chrono>
#include <cstdio>
#include <iostream>
#include <string>
#include <thread>

#include <json.hpp>

int main(int argc, char** argv) {
  const std::string mode = argc > 1 ? argv[1] : "echo";
  std::string line;
  while (std::getline(std::cin, line)) {
    if (line.empty()) continue;
    nlohmann::json req;
    try {
      req = nlohmann::json::parse(line);
    } catch (...) {
      std::fprintf(stderr, "echo_forecaster: unparseable request\n");
      return 1;
    }
    const int horizon = req.value("horizon", 0);
    const auto& ctx = req["context"];
    const double last = (ctx.is_array() && !ctx.empty()) ? ctx.back().get<double>() : 0.0;

    if (mode == "slow") std::this_thread::sleep_for(std::chrono::seconds(2));
    if (mode == "silent") continue;
    if (mode == "garbage") {
      std::printf("not json at all\n");
      std::fflush(stdout);
      continue;
    }
    if (mode == "huge") {
      // 1e999 overflows double; a strict reader must reject it
      std::string arr;
      for (int h = 0; h < horizon; ++h) arr += (h ? ",1e999" : "1e999");
      std::printf("{\"forecast\":[%s]}\n", arr.c_str());
      std::fflush(stdout);
      continue;
    }

    nlohmann::json resp;
    resp["series_id"] = req.value("series_id", "");
    if (mode == "wrongid") resp["series_id"] = resp["series_id"].get<std::string>() + "_x";
    int n = horizon;
    if (mode == "short" && n > 0) --n;
    auto arr = nlohmann::json::array();
    for (int h = 0; h < n; ++h) {
      if (mode == "text")
        arr.push_back("oops");
      else
        arr.push_back(last);
    }
    resp["forecast"] = arr;
    std::printf("%s\n", resp.dump().c_str());
    std::fflush(stdout);
  }
  return 0;
}
