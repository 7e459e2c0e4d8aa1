// Reference predictor backend for the JSON-lines protocol. Answers with the
// surrogate properties. The fault options exist for exercising client error
// handling.
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <algorithm>
#include <cstdio>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "damq/predictors.hpp"
#include "json.hpp"

namespace {

using json = nlohmann::json;

struct Options {
  bool reverse = false;  // answer each batch of received lines in reverse order
  int die_after = -1;    // exit without answering after reading this many requests
  int garbage_at = -1;   // send a non-JSON line instead of this request's answer
  int delay_ms = 0;      // sleep before each answer
  int port = -1;         // serve one TCP client instead of stdio
};

std::string answer(const std::string& line) {
  json req = json::parse(line);
  json resp = {{"id", req.at("id")}};
  try {
    const auto props = damq::surrogate_properties(damq::parse_smiles(req.at("smiles").get<std::string>()));
    resp["bde"] = props.bde ? json(*props.bde) : json(nullptr);
    resp["ip"] = props.ip;
    resp["valid3d"] = props.valid3d;
    resp["sa"] = props.sa;
  } catch (const std::exception& e) {
    resp["error"] = e.what();
  }
  return resp.dump() + "\n";
}

int serve(int in, int out, const Options& opt) {
  std::string pending, replies;
  std::vector<std::string> held;
  int seen = 0;
  char buf[65536];
  auto send_all = [&] {
    for (std::size_t done = 0; done < replies.size();) {
      const ssize_t n = ::write(out, replies.data() + done, replies.size() - done);
      if (n <= 0) return false;
      done += static_cast<std::size_t>(n);
    }
    replies.clear();
    return true;
  };
  for (ssize_t len; (len = ::read(in, buf, sizeof buf)) > 0;) {
    pending.append(buf, static_cast<std::size_t>(len));
    std::size_t start = 0;
    for (std::size_t nl; (nl = pending.find('\n', start)) != std::string::npos; start = nl + 1) {
      std::string line = pending.substr(start, nl - start);
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      if (seen == opt.die_after) std::_Exit(3);
      held.push_back(seen == opt.garbage_at ? std::string("not json\n") : answer(line));
      ++seen;
      if (opt.delay_ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(opt.delay_ms));
    }
    pending.erase(0, start);
    // Everything that arrived in one read is answered together.
    if (opt.reverse) std::reverse(held.begin(), held.end());
    for (auto& r : held) replies += r;
    held.clear();
    if (!send_all()) return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Surrogate property predictor speaking newline-delimited JSON"};
  Options opt;
  app.add_flag("--reverse", opt.reverse, "Answer the requests of each read in reverse order");
  app.add_option("--die-after", opt.die_after, "Exit after reading N requests");
  app.add_option("--garbage-at", opt.garbage_at, "Reply with a malformed line to the N-th request (0-based)");
  app.add_option("--delay-ms", opt.delay_ms, "Sleep before each answer");
  app.add_option("--port", opt.port, "Listen on 127.0.0.1:PORT and serve one client (0 picks a port)");
  CLI11_PARSE(app, argc, argv);

  if (opt.port < 0) return serve(STDIN_FILENO, STDOUT_FILENO, opt);

  const int server = ::socket(AF_INET, SOCK_STREAM, 0);
  int one = 1;
  ::setsockopt(server, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons(static_cast<uint16_t>(opt.port));
  if (::bind(server, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(server, 1) != 0) {
    std::perror("echo_predictor: bind");
    return 1;
  }
  socklen_t alen = sizeof addr;
  ::getsockname(server, reinterpret_cast<sockaddr*>(&addr), &alen);
  std::cout << "listening " << ntohs(addr.sin_port) << std::endl;
  const int client = ::accept(server, nullptr, nullptr);
  if (client < 0) return 1;
  const int rc = serve(client, client, opt);
  ::close(client);
  ::close(server);
  return rc;
}
