#pragma once

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "vadnet/dataset.hpp"
#include "vadnet/error.hpp"

namespace vadnet {

/// Log line: the canonical CSV row plus a trailing reviewed flag (0/1).
inline std::string format_log_line(const AnnotationRecord& rec) {
    return format_annotation_row(rec) + (rec.reviewed ? ",1" : ",0") + "\n";
}

inline AnnotationRecord parse_log_line(std::string_view line, std::size_t line_no) {
    const auto comma = line.rfind(',');
    if (comma == std::string_view::npos) throw Error(ErrorKind::Parse, detail::row_label(line_no) + ": bad log line");
    const std::string_view flag = line.substr(comma + 1);
    if (flag != "0" && flag != "1") {
        throw Error(ErrorKind::Parse, detail::row_label(line_no) + ": reviewed flag must be 0 or 1");
    }
    AnnotationRecord rec = parse_annotation_row(line.substr(0, comma), line_no);
    rec.reviewed = flag == "1";
    return rec;
}

/// Append-only annotation log with an in-memory index keyed by
/// (image_index, annotator_id). Every successful put() is written and
/// fsync'ed before it returns; reopening replays the log (later lines win).
class AnnotationStore {
public:
    enum class PutStatus { Created, Replaced, Conflict };

    struct PutResult {
        PutStatus status;
        AnnotationRecord record;  // the stored record, or the existing one on conflict
    };

    /// In-memory store with no backing file.
    AnnotationStore() = default;

    explicit AnnotationStore(std::filesystem::path log_path) : path_(std::move(log_path)) {
        replay();
        fd_ = ::open(path_.c_str(), O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
        if (fd_ < 0) throw Error(ErrorKind::Io, "cannot open log " + path_.string() + ": " + std::strerror(errno));
    }

    AnnotationStore(const AnnotationStore&) = delete;
    AnnotationStore& operator=(const AnnotationStore&) = delete;

    ~AnnotationStore() {
        if (fd_ >= 0) ::close(fd_);
    }

    PutResult put(const AnnotationRecord& rec, bool overwrite = false) {
        if (!valid_annotator_id(rec.annotator_id)) throw Error(ErrorKind::Validation, "bad annotator_id");
        if (!rec.triple.annotation_grade()) {
            throw Error(ErrorKind::Validation, "v, a, d must each be one of -2,-1,0,1,2");
        }
        std::unique_lock lock(mutex_);
        const Key key{rec.image_index, rec.annotator_id};
        const auto it = index_.find(key);
        if (it != index_.end() && !overwrite) return {PutStatus::Conflict, it->second};
        append(format_log_line(rec));
        const PutStatus status = it == index_.end() ? PutStatus::Created : PutStatus::Replaced;
        index_[key] = rec;
        return {status, rec};
    }

    std::optional<AnnotationRecord> find(std::size_t image_index, const std::string& annotator) const {
        std::shared_lock lock(mutex_);
        const auto it = index_.find({image_index, annotator});
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    /// All records sorted by (image_index, annotator_id).
    std::vector<AnnotationRecord> records() const {
        std::shared_lock lock(mutex_);
        std::vector<AnnotationRecord> out;
        out.reserve(index_.size());
        for (const auto& [key, rec] : index_) out.push_back(rec);
        return out;
    }

    std::size_t size() const {
        std::shared_lock lock(mutex_);
        return index_.size();
    }

    std::set<std::size_t> labeled_by(const std::string& annotator) const {
        std::shared_lock lock(mutex_);
        std::set<std::size_t> images;
        for (const auto& [key, rec] : index_)
            if (key.second == annotator) images.insert(key.first);
        return images;
    }

    void export_csv(std::ostream& out) const { write_annotations(out, records()); }

    void export_csv(const std::filesystem::path& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
        export_csv(out);
        if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
    }

    const std::filesystem::path& path() const { return path_; }
    std::size_t dropped_tail_bytes() const { return dropped_tail_; }

private:
    using Key = std::pair<std::size_t, std::string>;

    void replay() {
        std::error_code ec;
        if (!std::filesystem::exists(path_, ec)) return;
        std::ifstream in(path_, std::ios::binary);
        if (!in) throw Error(ErrorKind::Io, "cannot read log " + path_.string());
        std::ostringstream buffer;
        buffer << in.rdbuf();
        const std::string text = buffer.str();
        std::size_t pos = 0, line_no = 0;
        while (pos < text.size()) {
            const auto nl = text.find('\n', pos);
            if (nl == std::string::npos) break;  // unterminated tail: never acknowledged
            ++line_no;
            const std::string_view line(text.data() + pos, nl - pos);
            if (!line.empty()) {
                AnnotationRecord rec = parse_log_line(line, line_no);
                index_[{rec.image_index, rec.annotator_id}] = std::move(rec);
            }
            pos = nl + 1;
        }
        if (pos < text.size()) {
            // Drop the torn write so the next append starts on a fresh line.
            dropped_tail_ = text.size() - pos;
            std::filesystem::resize_file(path_, pos);
        }
    }

    void append(const std::string& line) {
        if (fd_ < 0) return;
        std::size_t written = 0;
        while (written < line.size()) {
            const ssize_t n = ::write(fd_, line.data() + written, line.size() - written);
            if (n < 0) {
                if (errno == EINTR) continue;
                throw Error(ErrorKind::Io, "log append failed: " + std::string(std::strerror(errno)));
            }
            written += static_cast<std::size_t>(n);
        }
        if (::fsync(fd_) != 0) throw Error(ErrorKind::Io, "log fsync failed: " + std::string(std::strerror(errno)));
    }

    std::filesystem::path path_;
    int fd_ = -1;
    std::size_t dropped_tail_ = 0;
    mutable std::shared_mutex mutex_;
    std::map<Key, AnnotationRecord> index_;
};

}  // namespace vadnet
