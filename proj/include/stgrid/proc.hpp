#pragma once

// Minimal line-oriented subprocess bridge: fork/exec a child, write request
// lines to its stdin, read response lines from its stdout with a deadline.

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <mutex>
#include <string>
#include <vector>

#include "stgrid/core.hpp"

namespace stgrid {

namespace detail {
inline void ignore_sigpipe_once() {
  static std::once_flag flag;
  std::call_once(flag, [] { ::signal(SIGPIPE, SIG_IGN); });
}
}  // namespace detail

class LineProcess {
 public:
  LineProcess(const std::vector<std::string>& argv, double timeout_s)
      : timeout_s_(timeout_s) {
    if (argv.empty()) throw Error("LineProcess: empty command line");
    detail::ignore_sigpipe_once();

    int to_child[2], from_child[2];
    if (::pipe2(to_child, O_CLOEXEC) != 0 || ::pipe2(from_child, O_CLOEXEC) != 0)
      throw Error("LineProcess: pipe failed: " + std::string(std::strerror(errno)));

    pid_ = ::fork();
    if (pid_ < 0) throw Error("LineProcess: fork failed: " + std::string(std::strerror(errno)));
    if (pid_ == 0) {
      // child: wire pipes to stdio (dup2 clears CLOEXEC) and exec
      ::dup2(to_child[0], STDIN_FILENO);
      ::dup2(from_child[1], STDOUT_FILENO);
      std::vector<char*> cargv;
      for (const auto& a : argv) cargv.push_back(const_cast<char*>(a.c_str()));
      cargv.push_back(nullptr);
      ::execvp(cargv[0], cargv.data());
      ::_exit(127);
    }
    ::close(to_child[0]);
    ::close(from_child[1]);
    in_fd_ = to_child[1];
    out_fd_ = from_child[0];
  }

  LineProcess(const LineProcess&) = delete;
  LineProcess& operator=(const LineProcess&) = delete;

  ~LineProcess() {
    if (in_fd_ >= 0) ::close(in_fd_);
    if (out_fd_ >= 0) ::close(out_fd_);
    if (pid_ > 0) {
      // give the child a moment to exit after stdin EOF, then force it
      for (int i = 0; i < 50; ++i) {
        if (::waitpid(pid_, nullptr, WNOHANG) != 0) return;
        ::usleep(10 * 1000);
      }
      ::kill(pid_, SIGKILL);
      ::waitpid(pid_, nullptr, 0);
    }
  }

  void send_line(const std::string& line) {
    std::string payload = line;
    payload.push_back('\n');
    std::size_t off = 0;
    while (off < payload.size()) {
      ssize_t n = ::write(in_fd_, payload.data() + off, payload.size() - off);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw Error("external process: write failed (" + std::string(std::strerror(errno)) + ")");
      }
      off += static_cast<std::size_t>(n);
    }
  }

  // One line from the child's stdout, or an error on deadline/EOF.
  std::string read_line() {
    const auto deadline =
        std::chrono::steady_clock::now() + std::chrono::duration<double>(timeout_s_);
    for (;;) {
      auto nl = buf_.find('\n');
      if (nl != std::string::npos) {
        std::string line = buf_.substr(0, nl);
        buf_.erase(0, nl + 1);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return line;
      }
      const auto remain = deadline - std::chrono::steady_clock::now();
      const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(remain).count();
      if (ms <= 0)
        throw Error("external process: timed out after " + std::to_string(timeout_s_) + " s");
      struct pollfd pfd{out_fd_, POLLIN, 0};
      int pr = ::poll(&pfd, 1, static_cast<int>(ms));
      if (pr < 0) {
        if (errno == EINTR) continue;
        throw Error("external process: poll failed (" + std::string(std::strerror(errno)) + ")");
      }
      if (pr == 0)
        throw Error("external process: timed out after " + std::to_string(timeout_s_) + " s");
      char chunk[4096];
      ssize_t n = ::read(out_fd_, chunk, sizeof(chunk));
      if (n < 0) {
        if (errno == EINTR) continue;
        throw Error("external process: read failed (" + std::string(std::strerror(errno)) + ")");
      }
      if (n == 0) throw Error("external process: closed its output stream");
      buf_.append(chunk, static_cast<std::size_t>(n));
    }
  }

 private:
  pid_t pid_ = -1;
  int in_fd_ = -1;
  int out_fd_ = -1;
  double timeout_s_;
  std::string buf_;
};

// Whitespace-splits a command string into argv (no shell quoting).
inline std::vector<std::string> split_command(const std::string& cmd) {
  std::vector<std::string> argv;
  std::string cur;
  for (char c : cmd) {
    if (c == ' ' || c == '\t') {
      if (!cur.empty()) argv.push_back(std::move(cur)), cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) argv.push_back(std::move(cur));
  return argv;
}

}  // namespace stgrid
