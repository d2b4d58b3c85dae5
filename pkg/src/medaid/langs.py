"""Supported language codes for the multilingual consultation system."""

from enum import Enum


class LanguageCode(str, Enum):
    EN = "en"
    HI = "hi"
    TE = "te"
    TA = "ta"
    BN = "bn"
    MR = "mr"
    AR = "ar"


LANGUAGE_NAMES: dict[LanguageCode, str] = {
    LanguageCode.EN: "English",
    LanguageCode.HI: "Hindi",
    LanguageCode.TE: "Telugu",
    LanguageCode.TA: "Tamil",
    LanguageCode.BN: "Bengali",
    LanguageCode.MR: "Marathi",
    LanguageCode.AR: "Arabic",
}


def language_name(code: LanguageCode) -> str:
    return LANGUAGE_NAMES[LanguageCode(code)]
